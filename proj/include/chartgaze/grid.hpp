#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace chartgaze {

/// Raised for malformed files and data that cannot be interpreted.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major H x W grid of reals. Carries gaze maps, attention maps,
/// images (one plane) and loss gradients.
class Map2D {
 public:
  Map2D(std::size_t height, std::size_t width, double fill = 0.0);
  Map2D(std::size_t height, std::size_t width, std::vector<double> values);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(std::size_t row, std::size_t col) { return values_[row * width_ + col]; }
  double operator()(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool same_shape(const Map2D& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  double min() const;
  double max() const;
  double sum() const;
  bool all_finite() const;

  friend bool operator==(const Map2D&, const Map2D&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> values_;
};

/// A Map2D whose entries are strictly positive and sum to one.
/// Only obtainable through dist_normalize() or a checked adoption.
class ProbMap {
 public:
  /// Adopts `m` after verifying positivity and unit mass (within `tol`).
  static ProbMap adopt(Map2D m, double tol = 1e-6);

  const Map2D& map() const { return map_; }
  std::size_t size() const { return map_.size(); }
  double operator[](std::size_t i) const { return map_[i]; }

 private:
  explicit ProbMap(Map2D m) : map_(std::move(m)) {}
  Map2D map_;
  friend ProbMap dist_normalize(const Map2D&, double);
};

/// Attention weights indexed (layer, head, text token, image patch), row-major.
class AttnTensor {
 public:
  AttnTensor(std::size_t layers, std::size_t heads, std::size_t tokens, std::size_t patches,
             double fill = 0.0);
  AttnTensor(std::size_t layers, std::size_t heads, std::size_t tokens, std::size_t patches,
             std::vector<double> values);

  std::size_t layers() const { return layers_; }
  std::size_t heads() const { return heads_; }
  std::size_t tokens() const { return tokens_; }
  std::size_t patches() const { return patches_; }

  std::size_t index(std::size_t l, std::size_t h, std::size_t t, std::size_t p) const {
    return ((l * heads_ + h) * tokens_ + t) * patches_ + p;
  }
  double& at(std::size_t l, std::size_t h, std::size_t t, std::size_t p) {
    return values_[index(l, h, t, p)];
  }
  double at(std::size_t l, std::size_t h, std::size_t t, std::size_t p) const {
    return values_[index(l, h, t, p)];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  friend bool operator==(const AttnTensor&, const AttnTensor&) = default;

 private:
  std::size_t layers_, heads_, tokens_, patches_;
  std::vector<double> values_;
};

/// Counts of rows/entries violating the sub-distribution invariant.
struct AttnValidation {
  std::size_t overfull_rows = 0;   // rows summing above 1 + row_tol
  std::size_t out_of_range = 0;    // entries outside [0, 1 + 1e-6]
  bool ok() const { return overfull_rows == 0 && out_of_range == 0; }
};
AttnValidation validate_attention(const AttnTensor& t, double row_tol = 1e-4);

inline constexpr double kDefaultEpsFloor = 1e-7;

/// Affine map to [0, 1]. A constant map becomes all zeros.
Map2D minmax_normalize(const Map2D& m);

/// (m + eps_floor) / sum(m + eps_floor). Requires m >= 0 and eps_floor > 0.
ProbMap dist_normalize(const Map2D& m, double eps_floor = kDefaultEpsFloor);

/// Bilinear resampling with corner-aligned sample positions.
Map2D bilinear_resize(const Map2D& m, std::size_t out_h, std::size_t out_w);

}  // namespace chartgaze
