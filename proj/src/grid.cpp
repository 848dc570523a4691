#include "chartgaze/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace chartgaze {

namespace {

void require_dims(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) {
    throw std::invalid_argument("grid dimensions must be >= 1, got " + std::to_string(h) + "x" +
                                std::to_string(w));
  }
}

}  // namespace

Map2D::Map2D(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width) {
  require_dims(height, width);
  values_.assign(height * width, fill);
}

Map2D::Map2D(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  require_dims(height, width);
  if (values_.size() != height * width) {
    throw std::invalid_argument("Map2D: expected " + std::to_string(height * width) +
                                " values, got " + std::to_string(values_.size()));
  }
}

double Map2D::min() const { return *std::min_element(values_.begin(), values_.end()); }
double Map2D::max() const { return *std::max_element(values_.begin(), values_.end()); }
double Map2D::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }
bool Map2D::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ProbMap ProbMap::adopt(Map2D m, double tol) {
  for (double v : m.values()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("ProbMap: entries must be finite and > 0");
    }
  }
  if (std::abs(m.sum() - 1.0) > tol) {
    throw std::invalid_argument("ProbMap: entries must sum to 1");
  }
  return ProbMap(std::move(m));
}

AttnTensor::AttnTensor(std::size_t layers, std::size_t heads, std::size_t tokens,
                       std::size_t patches, double fill)
    : layers_(layers), heads_(heads), tokens_(tokens), patches_(patches) {
  if (layers == 0 || heads == 0 || tokens == 0 || patches == 0) {
    throw std::invalid_argument("AttnTensor: all dimensions must be >= 1");
  }
  values_.assign(layers * heads * tokens * patches, fill);
}

AttnTensor::AttnTensor(std::size_t layers, std::size_t heads, std::size_t tokens,
                       std::size_t patches, std::vector<double> values)
    : AttnTensor(layers, heads, tokens, patches) {
  if (values.size() != values_.size()) {
    throw std::invalid_argument("AttnTensor: expected " + std::to_string(values_.size()) +
                                " values, got " + std::to_string(values.size()));
  }
  values_ = std::move(values);
}

AttnValidation validate_attention(const AttnTensor& t, double row_tol) {
  AttnValidation report;
  const auto vals = t.values();
  for (std::size_t row = 0; row * t.patches() < vals.size(); ++row) {
    double sum = 0.0;
    for (std::size_t p = 0; p < t.patches(); ++p) {
      const double v = vals[row * t.patches() + p];
      if (!(v >= 0.0 && v <= 1.0 + 1e-6)) ++report.out_of_range;
      sum += v;
    }
    if (sum > 1.0 + row_tol) ++report.overfull_rows;
  }
  return report;
}

Map2D minmax_normalize(const Map2D& m) {
  Map2D out(m.height(), m.width(), 0.0);
  const double lo = m.min();
  const double hi = m.max();
  if (!(hi > lo)) return out;
  const double span = hi - lo;
  for (std::size_t i = 0; i < m.size(); ++i) {
    out[i] = (m[i] - lo) / span;
  }
  return out;
}

ProbMap dist_normalize(const Map2D& m, double eps_floor) {
  if (!(eps_floor > 0.0)) {
    throw std::invalid_argument("dist_normalize: eps_floor must be > 0");
  }
  Map2D out(m.height(), m.width());
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] < 0.0) throw std::invalid_argument("dist_normalize: negative entry");
    out[i] = m[i] + eps_floor;
    total += out[i];
  }
  for (double& v : out.values()) v /= total;
  return ProbMap(std::move(out));
}

Map2D bilinear_resize(const Map2D& m, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) {
    throw std::invalid_argument("bilinear_resize: output dimensions must be >= 1");
  }
  if (out_h == m.height() && out_w == m.width()) return m;

  // Corner-aligned: output index 0 maps to input 0, last maps to last.
  auto source = [](std::size_t o, std::size_t n_out, std::size_t n_in) {
    if (n_out == 1) return 0.5 * static_cast<double>(n_in - 1);
    return static_cast<double>(o) * static_cast<double>(n_in - 1) /
           static_cast<double>(n_out - 1);
  };

  Map2D out(out_h, out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const double sy = source(r, out_h, m.height());
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, m.height() - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double sx = source(c, out_w, m.width());
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, m.width() - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = m(y0, x0) + fx * (m(y0, x1) - m(y0, x0));
      const double bot = m(y1, x0) + fx * (m(y1, x1) - m(y1, x0));
      // Convex combination keeps results inside [min, max].
      out(r, c) = std::clamp(top + fy * (bot - top), std::min(top, bot), std::max(top, bot));
    }
  }
  return out;
}

}  // namespace chartgaze
