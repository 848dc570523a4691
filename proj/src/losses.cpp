#include "chartgaze/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace chartgaze::loss {

void LossConfig::validate() const {
  if (!(alpha > 1.0)) throw std::invalid_argument("alpha must be > 1");
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be > 0");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) {
    throw std::invalid_argument("clamp_eps must lie in (0, 0.5)");
  }
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "wmse") return LossKind::kWmse;
  if (name == "kld") return LossKind::kKld;
  if (name == "focal") return LossKind::kFocal;
  if (name == "dicebce") return LossKind::kDiceBce;
  throw std::invalid_argument("unknown loss kind '" + std::string(name) +
                              "' (expected wmse|kld|focal|dicebce)");
}

std::string_view loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kWmse: return "wmse";
    case LossKind::kKld: return "kld";
    case LossKind::kFocal: return "focal";
    case LossKind::kDiceBce: return "dicebce";
  }
  return "?";
}

namespace {

void require_same_shape(const Map2D& g, const Map2D& a) {
  if (!g.same_shape(a)) {
    throw std::invalid_argument("loss inputs differ in shape: " + std::to_string(g.height()) +
                                "x" + std::to_string(g.width()) + " vs " +
                                std::to_string(a.height()) + "x" + std::to_string(a.width()));
  }
}

void require_unit_range(const Map2D& m, const char* what) {
  constexpr double kSlack = 1e-9;
  for (double v : m.values()) {
    if (!(v >= -kSlack && v <= 1.0 + kSlack)) {
      throw std::invalid_argument(std::string(what) + " values must lie in [0, 1]");
    }
  }
}

// Unchecked kernels: shape is assumed to match and the domain is not
// validated, so finite differences may step slightly outside it.

LossResult wmse_raw(const Map2D& g, const Map2D& a, const LossConfig& cfg) {
  LossResult r{0.0, Map2D(a.height(), a.width())};
  const auto n = static_cast<double>(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double w = 1.0 / (cfg.alpha - g[i]);
    const double d = g[i] - a[i];
    r.loss += w * d * d;
    r.grad[i] = -2.0 * w * d / n;
  }
  r.loss /= n;
  return r;
}

LossResult kld_raw(const Map2D& g, const Map2D& a, const LossConfig& cfg) {
  LossResult r{0.0, Map2D(a.height(), a.width())};
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double denom = a[i] + cfg.eps;
    if (g[i] > 0.0) r.loss += g[i] * std::log(g[i] / denom);
    r.grad[i] = -g[i] / denom;
  }
  return r;
}

LossResult focal_raw(const Map2D& g, const Map2D& a, const LossConfig& cfg) {
  LossResult r{0.0, Map2D(a.height(), a.width())};
  const double lo = cfg.clamp_eps;
  const double hi = 1.0 - cfg.clamp_eps;
  const double gm = cfg.gamma;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double q = std::clamp(a[i], lo, hi);
    const double p = g[i];
    const double log_q = std::log(q);
    const double log_1q = std::log1p(-q);
    const double pow_1q = std::pow(1.0 - q, gm);
    const double pow_q = std::pow(q, gm);
    r.loss -= p * pow_1q * log_q + (1.0 - p) * pow_q * log_1q;
    if (a[i] < lo || a[i] > hi) continue;  // clamped coordinate: zero gradient
    const double d_pos = (gm > 0.0 ? -gm * std::pow(1.0 - q, gm - 1.0) * log_q : 0.0) + pow_1q / q;
    const double d_neg = (gm > 0.0 ? gm * std::pow(q, gm - 1.0) * log_1q : 0.0) - pow_q / (1.0 - q);
    r.grad[i] = -(p * d_pos + (1.0 - p) * d_neg);
  }
  return r;
}

LossResult dice_bce_raw(const Map2D& g, const Map2D& a, const LossConfig& cfg) {
  LossResult r{0.0, Map2D(a.height(), a.width())};
  double s_ga = 0.0, s_g = 0.0, s_a = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    s_ga += g[i] * a[i];
    s_g += g[i];
    s_a += a[i];
  }
  const double num = 2.0 * s_ga + cfg.eps;
  const double den = s_g + s_a + cfg.eps;
  r.loss = cfg.lambda_dice * (1.0 - num / den);

  const double lo = cfg.clamp_eps;
  const double hi = 1.0 - cfg.clamp_eps;
  double bce = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double q = std::clamp(a[i], lo, hi);
    bce -= g[i] * std::log(q) + (1.0 - g[i]) * std::log1p(-q);
    const double d_dice = -(2.0 * g[i] * den - num) / (den * den);
    double d_bce = 0.0;
    if (a[i] >= lo && a[i] <= hi) d_bce = -g[i] / q + (1.0 - g[i]) / (1.0 - q);
    r.grad[i] = cfg.lambda_dice * d_dice + cfg.lambda_bce * d_bce;
  }
  r.loss += cfg.lambda_bce * bce;
  return r;
}

LossResult evaluate_raw(LossKind kind, const Map2D& g, const Map2D& a, const LossConfig& cfg) {
  switch (kind) {
    case LossKind::kWmse: return wmse_raw(g, a, cfg);
    case LossKind::kKld: return kld_raw(g, a, cfg);
    case LossKind::kFocal: return focal_raw(g, a, cfg);
    case LossKind::kDiceBce: return dice_bce_raw(g, a, cfg);
  }
  throw std::logic_error("unreachable loss kind");
}

}  // namespace

LossResult wmse(const Map2D& g, const Map2D& a, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(g, a);
  require_unit_range(g, "gaze map");
  require_unit_range(a, "attention map");
  return wmse_raw(g, a, cfg);
}

LossResult kld_loss(const ProbMap& g, const ProbMap& a, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(g.map(), a.map());
  return kld_raw(g.map(), a.map(), cfg);
}

LossResult focal(const Map2D& g, const Map2D& a, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(g, a);
  return focal_raw(g, a, cfg);
}

LossResult dice_bce(const Map2D& g, const Map2D& a, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(g, a);
  return dice_bce_raw(g, a, cfg);
}

LossResult evaluate(LossKind kind, const Map2D& g, const Map2D& a, const LossConfig& cfg) {
  switch (kind) {
    case LossKind::kWmse: return wmse(g, a, cfg);
    case LossKind::kKld: return kld_loss(ProbMap::adopt(g), ProbMap::adopt(a), cfg);
    case LossKind::kFocal: return focal(g, a, cfg);
    case LossKind::kDiceBce: return dice_bce(g, a, cfg);
  }
  throw std::logic_error("unreachable loss kind");
}

LossResult evaluate_unchecked(LossKind kind, const Map2D& g, const Map2D& a,
                              const LossConfig& cfg) {
  require_same_shape(g, a);
  return evaluate_raw(kind, g, a, cfg);
}

double combined(double l_lm, const LossResult& attn, double lambda1, double lambda2,
                double scale) {
  return lambda1 * l_lm + lambda2 * attn.loss * scale;
}

double finite_diff_check(LossKind kind, const Map2D& g, const Map2D& a, const LossConfig& cfg,
                         double h) {
  cfg.validate();
  require_same_shape(g, a);
  const LossResult analytic = evaluate_raw(kind, g, a, cfg);
  Map2D probe = a;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    probe[i] = a[i] + h;
    const double up = evaluate_raw(kind, g, probe, cfg).loss;
    probe[i] = a[i] - h;
    const double down = evaluate_raw(kind, g, probe, cfg).loss;
    probe[i] = a[i];
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(numeric - analytic.grad[i]) / (std::abs(analytic.grad[i]) + 1e-8));
  }
  return worst;
}

}  // namespace chartgaze::loss
