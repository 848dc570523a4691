#pragma once

#include <cstddef>
#include <vector>

#include "chartgaze/grid.hpp"

namespace chartgaze::perturb {

/// Selected region of a chart; true marks a selected pixel.
class BinaryMask {
 public:
  BinaryMask(std::size_t height, std::size_t width, bool fill = false);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return bits_.size(); }
  std::size_t count() const;

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }
  bool selected(std::size_t i, bool invert) const { return (bits_[i] != 0) != invert; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_, width_;
  std::vector<unsigned char> bits_;
};

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr std::size_t kDefaultKernelSize = 15;
inline constexpr double kDefaultBlurSigma = 5.0;

/// bits[i] = g[i] >= threshold, threshold in (0, 1).
BinaryMask gaze_mask(const Map2D& g, double threshold = kDefaultThreshold);

/// Zeroes the selected pixels (the complement when `invert`).
Map2D apply_mask(const Map2D& img, const BinaryMask& mask, bool invert = false);

/// Gaussian blur with a fixed odd `kernel_size` and renormalized borders,
/// composited onto the selected pixels only.
Map2D apply_region_blur(const Map2D& img, const BinaryMask& mask,
                        std::size_t kernel_size = kDefaultKernelSize,
                        double sigma = kDefaultBlurSigma, bool invert = false);

}  // namespace chartgaze::perturb
