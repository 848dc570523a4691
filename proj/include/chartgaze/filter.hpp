#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "chartgaze/grid.hpp"

namespace chartgaze {

enum class Border {
  /// Half-sample symmetric extension (…c b a | a b c…). The resulting
  /// operator is symmetric with unit row sums, so it preserves both
  /// constants and total mass.
  kReflect,
  /// Kernel truncated at the edge and rescaled to unit sum per position.
  kRenormalize,
};

/// Sampled Gaussian on offsets [-radius, radius], normalized to unit sum.
std::vector<double> gaussian_kernel(double sigma, std::size_t radius);

/// Maps an out-of-range index into [0, n) by half-sample symmetric reflection.
std::size_t reflect_index(long long i, std::size_t n);

/// Applies the same odd-length 1-D kernel along rows and then columns.
Map2D separable_convolve(const Map2D& m, std::span<const double> kernel, Border border);

}  // namespace chartgaze
