#include "chartgaze/perturb.hpp"

#include <algorithm>
#include <stdexcept>

#include "chartgaze/filter.hpp"

namespace chartgaze::perturb {

BinaryMask::BinaryMask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), bits_(height * width, fill ? 1 : 0) {
  if (height == 0 || width == 0) throw std::invalid_argument("mask dimensions must be >= 1");
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

namespace {

void require_same_shape(const Map2D& img, const BinaryMask& mask) {
  if (img.height() != mask.height() || img.width() != mask.width()) {
    throw std::invalid_argument("image and mask differ in shape");
  }
}

}  // namespace

BinaryMask gaze_mask(const Map2D& g, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("mask threshold must lie in (0, 1)");
  }
  BinaryMask mask(g.height(), g.width());
  for (std::size_t i = 0; i < g.size(); ++i) mask.set(i, g[i] >= threshold);
  return mask;
}

Map2D apply_mask(const Map2D& img, const BinaryMask& mask, bool invert) {
  require_same_shape(img, mask);
  Map2D out = img;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (mask.selected(i, invert)) out[i] = 0.0;
  }
  return out;
}

Map2D apply_region_blur(const Map2D& img, const BinaryMask& mask, std::size_t kernel_size,
                        double sigma, bool invert) {
  require_same_shape(img, mask);
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw std::invalid_argument("blur kernel size must be odd and >= 1");
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("blur sigma must be > 0");
  const auto kernel = gaussian_kernel(sigma, kernel_size / 2);
  const Map2D blurred = separable_convolve(img, kernel, Border::kRenormalize);
  Map2D out = img;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (mask.selected(i, invert)) out[i] = blurred[i];
  }
  return out;
}

}  // namespace chartgaze::perturb
