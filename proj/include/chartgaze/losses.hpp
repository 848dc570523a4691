#pragma once

#include <string>
#include <string_view>

#include "chartgaze/grid.hpp"

namespace chartgaze::loss {

/// Hyper-parameters shared by the gaze-alignment losses.
struct LossConfig {
  double alpha = 1.1;         // W-MSE weight offset, w = 1 / (alpha - G)
  double gamma = 2.0;         // focal focusing exponent
  double lambda_dice = 100.0;
  double lambda_bce = 1.0;
  double eps = 1e-8;          // Dice smoothing and KLD denominator guard
  double clamp_eps = 1e-7;    // predictions clamped to [clamp_eps, 1 - clamp_eps] before logs
  double scale = 1.0;         // magnitude-alignment factor applied in combined()

  /// Throws std::invalid_argument unless alpha > 1, gamma >= 0, eps > 0, clamp_eps in (0, 0.5).
  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  Map2D grad;  // d loss / d A, same shape as A
};

enum class LossKind { kWmse, kKld, kFocal, kDiceBce };

LossKind parse_loss_kind(std::string_view name);
std::string_view loss_kind_name(LossKind kind);

/// (1/N) sum w_i (G_i - A_i)^2 with w_i = 1 / (alpha - G_i). Both maps in [0, 1].
LossResult wmse(const Map2D& g, const Map2D& a, const LossConfig& cfg = {});

/// sum G_i ln(G_i / (A_i + eps)), with 0 ln 0 = 0. The gradient is taken with
/// respect to the (already normalized) A.
LossResult kld_loss(const ProbMap& g, const ProbMap& a, const LossConfig& cfg = {});

/// -sum [G (1-A)^gamma ln A + (1-G) A^gamma ln(1-A)] on clamped A.
LossResult focal(const Map2D& g, const Map2D& a, const LossConfig& cfg = {});

/// lambda_dice * Dice(G, A) + lambda_bce * BCE(G, clamp(A)).
LossResult dice_bce(const Map2D& g, const Map2D& a, const LossConfig& cfg = {});

/// Dispatches on `kind`. For kKld both maps must already be distributions.
LossResult evaluate(LossKind kind, const Map2D& g, const Map2D& a, const LossConfig& cfg = {});

/// Same as evaluate() but without domain checks (shapes must still match):
/// for callers that already guarantee the domain or deliberately probe
/// just outside it.
LossResult evaluate_unchecked(LossKind kind, const Map2D& g, const Map2D& a,
                              const LossConfig& cfg = {});

/// lambda1 * l_lm + lambda2 * attn.loss * scale.
double combined(double l_lm, const LossResult& attn, double lambda1 = 1.0, double lambda2 = 1.0,
                double scale = 1.0);

/// Central-difference check of the analytic gradient: the largest
/// |numeric - analytic| / (|analytic| + 1e-8) over all pixels.
double finite_diff_check(LossKind kind, const Map2D& g, const Map2D& a, const LossConfig& cfg,
                         double h = 1e-5);

}  // namespace chartgaze::loss
