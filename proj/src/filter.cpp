#include "chartgaze/filter.hpp"

#include <cmath>
#include <stdexcept>

namespace chartgaze {

std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

std::size_t reflect_index(long long i, std::size_t n) {
  const auto period = static_cast<long long>(2 * n);
  long long r = i % period;
  if (r < 0) r += period;
  if (r >= static_cast<long long>(n)) r = period - 1 - r;
  return static_cast<std::size_t>(r);
}

namespace {

// One 1-D pass over `count` lines of length `n`; element j of line l lives at
// base(l) + j * stride.
template <typename Base>
void convolve_lines(const std::vector<double>& src, std::vector<double>& dst, std::size_t count,
                    std::size_t n, std::size_t stride, Base base, std::span<const double> kernel,
                    Border border) {
  const auto radius = static_cast<long long>(kernel.size() / 2);
  const auto len = static_cast<long long>(n);
  for (std::size_t l = 0; l < count; ++l) {
    const std::size_t b = base(l);
    for (long long j = 0; j < len; ++j) {
      double acc = 0.0;
      double weight = 0.0;
      for (long long k = -radius; k <= radius; ++k) {
        const long long s = j + k;
        const double w = kernel[static_cast<std::size_t>(k + radius)];
        if (s >= 0 && s < len) {
          acc += w * src[b + static_cast<std::size_t>(s) * stride];
          weight += w;
        } else if (border == Border::kReflect) {
          acc += w * src[b + reflect_index(s, n) * stride];
        }
      }
      if (border == Border::kRenormalize) acc /= weight;
      dst[b + static_cast<std::size_t>(j) * stride] = acc;
    }
  }
}

}  // namespace

Map2D separable_convolve(const Map2D& m, std::span<const double> kernel, Border border) {
  if (kernel.empty() || kernel.size() % 2 == 0) {
    throw std::invalid_argument("separable_convolve: kernel length must be odd");
  }
  const std::size_t h = m.height();
  const std::size_t w = m.width();
  std::vector<double> src(m.values().begin(), m.values().end());
  std::vector<double> tmp(src.size());
  convolve_lines(src, tmp, h, w, 1, [w](std::size_t r) { return r * w; }, kernel, border);
  convolve_lines(tmp, src, w, h, w, [](std::size_t c) { return c; }, kernel, border);
  return Map2D(h, w, std::move(src));
}

}  // namespace chartgaze
