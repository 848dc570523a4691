#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chartgaze/grid.hpp"
#include "chartgaze/losses.hpp"
#include "chartgaze/metrics.hpp"

// Desk-scale cross-attention classifier over synthetic bar charts. Text
// tokens (the question) attend over image patches and over each other; the
// text->image attention is extracted and supervised with a gaze target.

namespace chartgaze::toy {

enum class QuestionType : int { kTaller = 0, kShorter = 1, kRising = 2, kFalling = 3 };
inline constexpr int kQuestionTypes = 4;
inline constexpr std::size_t kQuestionTokens = 3;  // [type, bar a, bar b]

/// One chart / question / answer / gaze-target tuple.
///
/// The chart is a grid x grid patch map whose column c is a bar: the bottom
/// heights[c] cells are 1, the rest 0 (row 0 is the top). The question
/// compares bars ref_a and ref_b:
///   taller  -> h[a] > h[b]      shorter -> h[a] < h[b]
///   rising  -> h[b] > h[a]      falling -> h[b] < h[a]   (b = a + 1)
/// The gaze target is built by the gaze pipeline from one synthetic
/// fixation on every filled cell of the two referenced bars.
struct SynthInstance {
  Map2D chart;
  std::vector<int> question;  // token ids, length kQuestionTokens
  QuestionType type = QuestionType::kTaller;
  std::size_t ref_a = 0;
  std::size_t ref_b = 0;
  bool answer = false;  // true = yes
  Map2D target_gaze;
};

inline constexpr double kDefaultGazeSigma = 1.0;  // in patch cells
inline constexpr double kSynthFixationMs = 200.0;

/// Deterministic under `seed`; exactly half of the answers are yes (n odd:
/// one extra no).
std::vector<SynthInstance> synth_dataset(std::size_t n, std::size_t grid, std::uint64_t seed,
                                         double gaze_sigma = kDefaultGazeSigma);

/// Token id of a bar reference.
inline int bar_token(std::size_t bar) { return kQuestionTypes + static_cast<int>(bar); }

struct ModelDims {
  std::size_t grid = 8;
  std::size_t d_model = 16;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t hidden = 32;
  std::size_t tokens = kQuestionTokens;

  std::size_t patches() const { return grid * grid; }
  std::size_t vocab() const { return kQuestionTypes + grid; }
  std::size_t head_dim() const { return d_model / heads; }
};

/// Offsets of every parameter block inside the flat parameter vector.
struct Layout {
  struct LayerBlock {
    std::size_t wq, wk, wv, wo;  // d x d each
  };
  std::size_t patch_w = 0, patch_b = 0;  // d
  std::size_t pos_row = 0;               // grid x d
  std::size_t pos_col = 0;               // grid x d
  std::size_t tok_emb = 0;               // vocab x d
  std::size_t pos_txt = 0;               // tokens x d
  std::vector<LayerBlock> layers;
  std::size_t w1 = 0, b1 = 0;            // hidden x (tokens*d), hidden
  std::size_t w2 = 0, b2 = 0;            // 2 x hidden, 2
  std::size_t total = 0;

  static Layout of(const ModelDims& dims);
};

class ToyModel {
 public:
  /// Random initialization; bit-identical for equal (dims, seed).
  static ToyModel initialize(const ModelDims& dims, std::uint64_t seed);
  ToyModel(const ModelDims& dims, std::vector<double> params);

  const ModelDims& dims() const { return dims_; }
  const Layout& layout() const { return layout_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  friend bool operator==(const ToyModel& a, const ToyModel& b) { return a.params_ == b.params_; }

 private:
  ModelDims dims_;
  Layout layout_;
  std::vector<double> params_;
};

void save_model(const std::filesystem::path& path, const ToyModel& model);
ToyModel load_model(const std::filesystem::path& path);

/// Class probabilities, index 0 = no, 1 = yes.
using Probs = std::array<double, 2>;

struct ForwardResult {
  Probs probs{};
  /// (layers, heads, tokens, patches): text->image rows of each attention
  /// softmax, restricted to image positions (each row sums to <= 1).
  AttnTensor attention;
};

ForwardResult forward(const ToyModel& model, const Map2D& chart, std::span<const int> question);

struct LmLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

/// -ln p[answer]; gradient with respect to the probabilities.
LmLoss lm_loss(const Probs& probs, bool answer);
/// -ln softmax(logits)[answer]; gradient with respect to the logits.
LmLoss lm_loss_from_logits(std::span<const double> logits, bool answer);

struct TrainConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  loss::LossKind loss = loss::LossKind::kWmse;
  std::size_t m_layers = 1;
  double learning_rate = 0.05;
  std::size_t epochs = 200;
  std::size_t batch_size = 20;
  std::uint64_t seed = 1;
  double sigma = kDefaultGazeSigma;

  void validate(const ModelDims& dims) const;
};

/// Parses "key = value" lines ('#' starts a comment). Keys: lambda1,
/// lambda2, loss, m_layers, learning_rate, epochs, batch_size, seed, sigma.
/// Unknown keys are errors; missing keys keep their defaults.
TrainConfig parse_train_config(const std::string& text);
TrainConfig read_train_config(const std::filesystem::path& path);

/// Mean over the first m_layers / heads / tokens as a grid x grid patch map.
Map2D attention_patch_map(const ForwardResult& fwd, std::size_t m_layers, std::size_t grid);

struct Objective {
  double total = 0.0;  // lambda1 * lm + lambda2 * attn, batch mean
  double lm = 0.0;
  double attn = 0.0;
};

/// Per-instance max of the aggregated attention, the normalizer of the
/// supervised map. Held constant under differentiation.
std::vector<double> attention_normalizers(const ToyModel& model,
                                          std::span<const SynthInstance> batch,
                                          const TrainConfig& cfg);

/// Batch-mean training objective. When `grad` is non-null it receives the
/// exact gradient (resized to the parameter count). With `frozen_norms`
/// the attention normalizers are taken from it instead of recomputed, which
/// makes the objective the smooth surrogate the gradient differentiates.
Objective objective(const ToyModel& model, std::span<const SynthInstance> batch,
                    const TrainConfig& cfg, std::vector<double>* grad = nullptr,
                    const std::vector<double>* frozen_norms = nullptr);

struct EpochStats {
  std::size_t epoch = 0;
  double accuracy = 0.0;
  double lm_loss = 0.0;
  double attn_loss = 0.0;
  metrics::MetricReport metrics;
};

struct TrainResult {
  ToyModel model;
  std::vector<EpochStats> history;
};

/// Mini-batch gradient descent on the joint objective. Per-instance
/// gradients are summed in instance order, so `workers` > 1 gives the same
/// parameters bit for bit. Throws std::runtime_error on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const std::vector<SynthInstance>& data,
                  const ModelDims& dims = {}, std::size_t workers = 1);

struct EvalReport {
  double accuracy = 0.0;
  metrics::MetricReport metrics;  // mean over instances with a defined CC
  std::size_t scored = 0;         // instances contributing to `metrics`
};

EvalReport evaluate(const ToyModel& model, const std::vector<SynthInstance>& data,
                    std::size_t m_layers);

/// Copies of `data` with every chart zeroed on gaze_mask(target_gaze, threshold)
/// (or its complement when `invert`).
std::vector<SynthInstance> mask_charts(const std::vector<SynthInstance>& data, double threshold,
                                       bool invert);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history);

/// Writes chart_NNNNN.gam, gaze_NNNNN.gam and labels.csv
/// (index,type,ref_a,ref_b,answer) into `dir`.
void write_dataset(const std::filesystem::path& dir, const std::vector<SynthInstance>& data);
std::vector<SynthInstance> read_dataset(const std::filesystem::path& dir);

}  // namespace chartgaze::toy
