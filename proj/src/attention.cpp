#include "chartgaze/attention.hpp"

#include <charconv>
#include <stdexcept>

namespace chartgaze::attention {

PatchGrid parse_grid(const std::string& text) {
  const auto x = text.find_first_of("xX");
  const auto number = [&](std::size_t from, std::size_t to) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + from, text.data() + to, v);
    if (from == to || ec != std::errc() || ptr != text.data() + to) {
      throw std::invalid_argument("expected RxC, got '" + text + "'");
    }
    return v;
  };
  if (x == std::string::npos) throw std::invalid_argument("expected RxC, got '" + text + "'");
  const PatchGrid g{number(0, x), number(x + 1, text.size())};
  if (g.rows == 0 || g.cols == 0) throw std::invalid_argument("grid dimensions must be >= 1");
  return g;
}

namespace {

void check_layers(const AttnTensor& t, std::size_t m_layers) {
  if (m_layers < 1 || m_layers > t.layers()) {
    throw std::invalid_argument("m_layers must lie in [1, " + std::to_string(t.layers()) +
                                "], got " + std::to_string(m_layers));
  }
}

}  // namespace

std::vector<double> aggregate_attention(const AttnTensor& t, std::size_t m_layers) {
  check_layers(t, m_layers);
  const std::size_t patches = t.patches();
  const std::size_t rows = m_layers * t.heads() * t.tokens();
  std::vector<double> out(patches, 0.0);
  // Layer-major layout: the first m_layers occupy a contiguous prefix.
  const auto vals = t.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = vals.data() + r * patches;
    for (std::size_t p = 0; p < patches; ++p) out[p] += row[p];
  }
  for (double& v : out) v /= static_cast<double>(rows);
  return out;
}

std::vector<std::vector<double>> aggregate_attention_split(const AttnTensor& t,
                                                           std::size_t m_layers, Axis keep) {
  check_layers(t, m_layers);
  const std::size_t n_keep =
      keep == Axis::kLayer ? m_layers : (keep == Axis::kHead ? t.heads() : t.tokens());
  std::vector<std::vector<double>> out(n_keep, std::vector<double>(t.patches(), 0.0));
  for (std::size_t l = 0; l < m_layers; ++l) {
    for (std::size_t h = 0; h < t.heads(); ++h) {
      for (std::size_t tok = 0; tok < t.tokens(); ++tok) {
        const std::size_t k = keep == Axis::kLayer ? l : (keep == Axis::kHead ? h : tok);
        for (std::size_t p = 0; p < t.patches(); ++p) out[k][p] += t.at(l, h, tok, p);
      }
    }
  }
  const double count =
      static_cast<double>(m_layers * t.heads() * t.tokens()) / static_cast<double>(n_keep);
  for (auto& v : out) {
    for (double& x : v) x /= count;
  }
  return out;
}

Map2D to_patch_map(std::span<const double> v, PatchGrid grid) {
  if (v.size() != grid.patches()) {
    throw std::invalid_argument("patch vector of length " + std::to_string(v.size()) +
                                " does not match grid " + std::to_string(grid.rows) + "x" +
                                std::to_string(grid.cols));
  }
  return Map2D(grid.rows, grid.cols, std::vector<double>(v.begin(), v.end()));
}

Map2D to_image_map(const Map2D& pm, std::size_t img_h, std::size_t img_w) {
  if (img_h < pm.height() || img_w < pm.width()) {
    throw std::invalid_argument("image dimensions must be at least the patch-grid dimensions");
  }
  return minmax_normalize(bilinear_resize(pm, img_h, img_w));
}

}  // namespace chartgaze::attention
