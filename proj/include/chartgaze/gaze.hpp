#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chartgaze/grid.hpp"

namespace chartgaze::gaze {

/// One eye-tracker record in screen pixels.
struct GazeSample {
  std::int64_t t_us = 0;
  double x_px = 0.0;
  double y_px = 0.0;
  bool valid = true;
};

struct Fixation {
  double x_px = 0.0;
  double y_px = 0.0;
  std::int64_t start_us = 0;
  double duration_ms = 0.0;
};

struct Session {
  std::string id;
  std::vector<Fixation> fixations;
  std::size_t height = 0;
  std::size_t width = 0;

  /// Sum of fixation durations.
  double total_view_ms() const;
};

inline constexpr double kDefaultDispersionPx = 40.0;
inline constexpr double kDefaultMinDurationMs = 100.0;
inline constexpr double kDefaultSigmaPx = 40.0;

/// Keeps valid samples with finite coordinates inside [0, width) x [0, height).
std::vector<GazeSample> filter_samples(const std::vector<GazeSample>& samples,
                                       std::size_t height, std::size_t width);

/// Dispersion-threshold (I-DT) fixation detection. A window qualifies when
/// it spans at least `min_dur_ms` and both its x and y extents stay within
/// `dispersion_px`; qualifying windows are grown greedily, then consumed.
/// Duration is the time between the first and last member sample.
std::vector<Fixation> detect_fixations_idt(const std::vector<GazeSample>& samples,
                                           double dispersion_px = kDefaultDispersionPx,
                                           double min_dur_ms = kDefaultMinDurationMs);

/// Total dwell time per pixel; centroids are rounded half-up then clamped.
Map2D accumulate_fixations(const std::vector<Fixation>& fixations, std::size_t h, std::size_t w);

/// ln(1 + m) elementwise.
Map2D log_transform(const Map2D& m);

/// Separable Gaussian with radius ceil(3 sigma) and symmetric-reflection
/// borders (mass- and constant-preserving).
Map2D gaussian_blur(const Map2D& m, double sigma_px);

/// minmax(blur(log1p(accumulate(fixations)))).
Map2D build_gaze_map(const std::vector<Fixation>& fixations, std::size_t h, std::size_t w,
                     double sigma_px = kDefaultSigmaPx);

/// Drops floor(n * drop_pct / 100) sessions with the least viewing time
/// (ties: smaller id dropped first). Survivors keep their input order.
std::vector<Session> filter_sessions(const std::vector<Session>& sessions, double drop_pct);

// CSV interfaces.
// samples:   header "t_us,x_px,y_px,valid", valid in {0,1}
// fixations: header "x_px,y_px,start_us,duration_ms"
std::vector<GazeSample> read_samples_csv(const std::filesystem::path& path);
std::vector<Fixation> read_fixations_csv(const std::filesystem::path& path);
void write_fixations_csv(const std::filesystem::path& path, const std::vector<Fixation>& fx);

}  // namespace chartgaze::gaze
