#include "chartgaze/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace chartgaze::metrics {

namespace {

void require_same_shape(const Map2D& g, const Map2D& a) {
  if (!g.same_shape(a)) throw std::invalid_argument("metric inputs differ in shape");
}

}  // namespace

double cc(const Map2D& g, const Map2D& a) {
  require_same_shape(g, a);
  const auto n = static_cast<double>(g.size());
  const double mg = g.sum() / n;
  const double ma = a.sum() / n;
  double sgg = 0.0, saa = 0.0, sga = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double dg = g[i] - mg;
    const double da = a[i] - ma;
    sgg += dg * dg;
    saa += da * da;
    sga += dg * da;
  }
  if (!(sgg > 0.0) || !(saa > 0.0)) {
    throw std::domain_error("cc: correlation is undefined for a constant map");
  }
  return std::clamp(sga / std::sqrt(sgg * saa), -1.0, 1.0);
}

double kl_div(const Map2D& g, const Map2D& a, double eps_floor) {
  require_same_shape(g, a);
  const ProbMap pg = dist_normalize(g, eps_floor);
  const ProbMap pa = dist_normalize(a, eps_floor);
  double kl = 0.0;
  for (std::size_t i = 0; i < pg.size(); ++i) kl += pg[i] * std::log(pg[i] / pa[i]);
  return kl;
}

double sim(const Map2D& g, const Map2D& a, double eps_floor) {
  require_same_shape(g, a);
  const ProbMap pg = dist_normalize(g, eps_floor);
  const ProbMap pa = dist_normalize(a, eps_floor);
  double s = 0.0;
  for (std::size_t i = 0; i < pg.size(); ++i) s += std::min(pg[i], pa[i]);
  return s;
}

MetricReport report(const Map2D& g, const Map2D& a, double eps_floor) {
  return {cc(g, a), kl_div(g, a, eps_floor), sim(g, a, eps_floor)};
}

}  // namespace chartgaze::metrics
