#pragma once

#include "chartgaze/grid.hpp"

namespace chartgaze::metrics {

/// Agreement between a gaze map and an attention map. Gaze is always the
/// reference distribution for KL.
struct MetricReport {
  double cc = 0.0;   // [-1, 1]
  double kl = 0.0;   // >= 0
  double sim = 0.0;  // [0, 1]
};

/// Pearson correlation over the flattened maps. Throws std::domain_error when
/// either map is constant (correlation undefined).
double cc(const Map2D& g, const Map2D& a);

/// KL(P_g || P_a) with P = dist_normalize(., eps_floor).
double kl_div(const Map2D& g, const Map2D& a, double eps_floor = kDefaultEpsFloor);

/// Histogram intersection sum_i min(P_g,i, P_a,i) of the distribution-normalized maps.
double sim(const Map2D& g, const Map2D& a, double eps_floor = kDefaultEpsFloor);

MetricReport report(const Map2D& g, const Map2D& a, double eps_floor = kDefaultEpsFloor);

}  // namespace chartgaze::metrics
