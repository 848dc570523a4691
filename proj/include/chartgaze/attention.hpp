#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "chartgaze/grid.hpp"

namespace chartgaze::attention {

/// rows x cols layout of the flat image-patch axis.
struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patches() const { return rows * cols; }
};

/// Parses "RxC" (e.g. "24x24").
PatchGrid parse_grid(const std::string& text);

/// Mean over the first `m_layers` layers, every head and every text token,
/// one value per image patch.
std::vector<double> aggregate_attention(const AttnTensor& t, std::size_t m_layers);

enum class Axis { kLayer, kHead, kToken };

/// Debug variant that keeps one axis: entry k is the patch vector averaged
/// over everything except index k of `keep` (layers limited to `m_layers`).
std::vector<std::vector<double>> aggregate_attention_split(const AttnTensor& t,
                                                           std::size_t m_layers, Axis keep);

/// Row-major reshape of a patch vector.
Map2D to_patch_map(std::span<const double> v, PatchGrid grid);

/// minmax_normalize(bilinear_resize(pm, img_h, img_w)).
Map2D to_image_map(const Map2D& pm, std::size_t img_h, std::size_t img_w);

}  // namespace chartgaze::attention
