#include "doctest.h"

#include <cmath>

#include "chartgaze/toy.hpp"
#include "support.hpp"

using namespace chartgaze;
using namespace chartgaze::toy;

namespace {

int bar_height(const Map2D& chart, std::size_t col) {
  int h = 0;
  for (std::size_t r = 0; r < chart.height(); ++r) h += chart(r, col) > 0.0 ? 1 : 0;
  return h;
}

TrainConfig quick_config(loss::LossKind kind = loss::LossKind::kWmse) {
  TrainConfig cfg;
  cfg.loss = kind;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("synth_dataset is balanced, consistent and seeded") {
  const auto data = synth_dataset(101, 8, 42);
  REQUIRE(data.size() == 101);
  std::size_t yes = 0;
  for (const auto& inst : data) {
    yes += inst.answer ? 1 : 0;
    const int ha = bar_height(inst.chart, inst.ref_a);
    const int hb = bar_height(inst.chart, inst.ref_b);
    CHECK(ha != hb);
    bool truth = false;
    switch (inst.type) {
      case QuestionType::kTaller: truth = ha > hb; break;
      case QuestionType::kShorter: truth = ha < hb; break;
      case QuestionType::kRising: truth = hb > ha; CHECK(inst.ref_b == inst.ref_a + 1); break;
      case QuestionType::kFalling: truth = hb < ha; CHECK(inst.ref_b == inst.ref_a + 1); break;
    }
    CHECK(truth == inst.answer);
    CHECK(inst.question == std::vector<int>{static_cast<int>(inst.type), bar_token(inst.ref_a),
                                            bar_token(inst.ref_b)});
    // Every bar has at least one cell; bars fill from the bottom.
    for (std::size_t c = 0; c < 8; ++c) CHECK(inst.chart(7, c) == 1.0);
    // The gaze target peaks at or next to a referenced bar, and each
    // referenced bar outshines every column away from both.
    std::size_t arg = 0;
    for (std::size_t i = 1; i < inst.target_gaze.size(); ++i) {
      if (inst.target_gaze[i] > inst.target_gaze[arg]) arg = i;
    }
    const auto col = static_cast<long long>(arg % 8);
    CHECK(std::min(std::llabs(col - static_cast<long long>(inst.ref_a)),
                   std::llabs(col - static_cast<long long>(inst.ref_b))) <= 1);
    auto column_peak = [&](std::size_t c) {
      double peak = 0.0;
      for (std::size_t r = 0; r < 8; ++r) peak = std::max(peak, inst.target_gaze(r, c));
      return peak;
    };
    const double weakest_ref = std::min(column_peak(inst.ref_a), column_peak(inst.ref_b));
    for (std::size_t c = 0; c < 8; ++c) {
      const auto dc = static_cast<long long>(c);
      if (std::llabs(dc - static_cast<long long>(inst.ref_a)) >= 2 &&
          std::llabs(dc - static_cast<long long>(inst.ref_b)) >= 2) {
        CHECK(column_peak(c) < weakest_ref);
      }
    }
    CHECK(inst.target_gaze.max() == doctest::Approx(1.0));
  }
  CHECK(yes == 50);

  const auto again = synth_dataset(101, 8, 42);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(again[i].chart == data[i].chart);
    CHECK(again[i].target_gaze == data[i].target_gaze);
  }
  const auto other = synth_dataset(101, 8, 43);
  bool differs = false;
  for (std::size_t i = 0; i < data.size(); ++i) differs = differs || !(other[i].chart == data[i].chart);
  CHECK(differs);
  CHECK_THROWS_AS(synth_dataset(0, 8, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_dataset(5, 3, 1), std::invalid_argument);
}

TEST_CASE("forward produces probabilities and sub-stochastic attention rows") {
  const auto model = ToyModel::initialize({}, 1);
  const auto data = synth_dataset(4, 8, 2);
  for (const auto& inst : data) {
    const auto fwd = forward(model, inst.chart, inst.question);
    CHECK(fwd.probs[0] + fwd.probs[1] == doctest::Approx(1.0));
    CHECK(fwd.attention.layers() == 2);
    CHECK(fwd.attention.heads() == 2);
    CHECK(fwd.attention.tokens() == 3);
    CHECK(fwd.attention.patches() == 64);
    CHECK(validate_attention(fwd.attention).ok());
    const Map2D pm = attention_patch_map(fwd, 1, 8);
    CHECK(pm.height() == 8);
    CHECK(pm.sum() < 1.0);
  }
  const std::vector<int> bad{0, 99, 4};
  CHECK_THROWS_AS(forward(model, data[0].chart, bad), std::invalid_argument);
  CHECK_THROWS_AS(forward(model, Map2D(4, 4), data[0].question), std::invalid_argument);
}

TEST_CASE("lm_loss values and gradients") {
  const auto r = lm_loss({0.25, 0.75}, true);
  CHECK(r.loss == doctest::Approx(-std::log(0.75)));
  CHECK(r.grad[1] == doctest::Approx(-1.0 / 0.75));
  CHECK(r.grad[0] == 0.0);
  const std::vector<double> logits{0.0, std::log(3.0)};
  const auto l = lm_loss_from_logits(logits, true);
  CHECK(l.loss == doctest::Approx(-std::log(0.75)));
  CHECK(l.grad[0] == doctest::Approx(0.25));
  CHECK(l.grad[1] == doctest::Approx(-0.25));
  // Extreme logits stay finite.
  const std::vector<double> big{800.0, -800.0};
  CHECK(lm_loss_from_logits(big, true).loss == doctest::Approx(1600.0));
}

TEST_CASE("whole-model gradient matches finite differences") {
  const auto data = synth_dataset(2, 8, 5);
  auto model = ToyModel::initialize({}, 3);
  for (auto kind : {loss::LossKind::kWmse, loss::LossKind::kKld, loss::LossKind::kFocal,
                    loss::LossKind::kDiceBce}) {
    CAPTURE(loss::loss_kind_name(kind));
    TrainConfig cfg = quick_config(kind);
    cfg.lambda2 = 0.7;
    // Scaled normalizers keep the attention map off the clamp boundary, where
    // the surrogate is not differentiable.
    auto norms = attention_normalizers(model, data, cfg);
    for (double& n : norms) n *= 1.25;
    std::vector<double> grad;
    objective(model, data, cfg, &grad, &norms);
    auto p = model.params();
    REQUIRE(grad.size() == p.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); i += 7) {
      const double h = 1e-5, orig = p[i];
      p[i] = orig + h;
      const double up = objective(model, data, cfg, nullptr, &norms).total;
      p[i] = orig - h;
      const double down = objective(model, data, cfg, nullptr, &norms).total;
      p[i] = orig;
      const double num = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(num - grad[i]) / (std::abs(grad[i]) + 1e-6));
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("lambda2 = 0 leaves only the language-model gradient") {
  const auto data = synth_dataset(3, 8, 8);
  const auto model = ToyModel::initialize({}, 2);
  TrainConfig with = quick_config(), without = quick_config();
  without.lambda2 = 0.0;
  std::vector<double> g_with, g_without;
  const auto o_with = objective(model, data, with, &g_with);
  const auto o_without = objective(model, data, without, &g_without);
  CHECK(o_without.total == doctest::Approx(o_without.lm));
  CHECK(o_with.total == doctest::Approx(o_with.lm + o_with.attn));
  CHECK(o_with.attn == doctest::Approx(o_without.attn));
  CHECK_FALSE(g_with == g_without);
}

TEST_CASE("training is reproducible and independent of the worker count") {
  const auto data = synth_dataset(40, 8, 9);
  const auto cfg = quick_config();
  const auto a = train(cfg, data, {}, 1);
  const auto b = train(cfg, data, {}, 1);
  const auto c = train(cfg, data, {}, 3);
  CHECK(a.model == b.model);
  CHECK(a.model == c.model);
  REQUIRE(a.history.size() == 3);
  CHECK(a.history[2].epoch == 3);
  CHECK(a.history[0].lm_loss == c.history[0].lm_loss);
  TrainConfig other = cfg;
  other.seed = 8;
  CHECK_FALSE(train(other, data, {}, 1).model == a.model);
}

TEST_CASE("training reduces the objective") {
  const auto data = synth_dataset(60, 8, 10);
  TrainConfig cfg = quick_config();
  cfg.epochs = 25;
  const auto r = train(cfg, data);
  CHECK(r.history.back().lm_loss < r.history.front().lm_loss);
  CHECK(r.history.back().attn_loss < r.history.front().attn_loss);
}

TEST_CASE("divergence is reported") {
  const auto data = synth_dataset(20, 8, 11);
  TrainConfig cfg = quick_config();
  cfg.learning_rate = 1e200;
  CHECK_THROWS_AS(train(cfg, data), std::runtime_error);
}

TEST_CASE("evaluate and mask_charts") {
  const auto data = synth_dataset(30, 8, 12);
  const auto model = ToyModel::initialize({}, 4);
  const auto rep = evaluate(model, data, 1);
  CHECK(rep.accuracy >= 0.0);
  CHECK(rep.accuracy <= 1.0);
  CHECK(rep.scored == 30);
  const auto masked = mask_charts(data, 0.5, false);
  const auto comp = mask_charts(data, 0.5, true);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t k = 0; k < 64; ++k) {
      const bool sel = data[i].target_gaze[k] >= 0.5;
      CHECK(masked[i].chart[k] == (sel ? 0.0 : data[i].chart[k]));
      CHECK(comp[i].chart[k] == (sel ? data[i].chart[k] : 0.0));
    }
  }
}

TEST_CASE("train config parsing") {
  const auto cfg = parse_train_config(
      "# toy run\nlambda1 = 0.5\nlambda2=2\n  loss = kld  # inline\nm_layers = 2\n"
      "learning_rate = 0.01\nepochs = 7\nbatch_size = 4\nseed = 99\nsigma = 1.5\n\n");
  CHECK(cfg.lambda1 == 0.5);
  CHECK(cfg.lambda2 == 2.0);
  CHECK(cfg.loss == loss::LossKind::kKld);
  CHECK(cfg.m_layers == 2);
  CHECK(cfg.learning_rate == 0.01);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.batch_size == 4);
  CHECK(cfg.seed == 99);
  CHECK(cfg.sigma == 1.5);
  CHECK(parse_train_config("").epochs == 200);
  CHECK_THROWS_AS(parse_train_config("momentum = 0.9\n"), DataError);
  CHECK_THROWS_AS(parse_train_config("epochs = many\n"), DataError);
  CHECK_THROWS_AS(parse_train_config("epochs 5\n"), DataError);
  TrainConfig bad;
  bad.m_layers = 3;
  CHECK_THROWS_AS(bad.validate({}), std::invalid_argument);
}

TEST_CASE("model and dataset files round trip") {
  testing::TempDir dir("toy");
  const auto model = ToyModel::initialize({}, 5);
  save_model(dir / "m.bin", model);
  CHECK(load_model(dir / "m.bin") == model);
  testing::spit(dir / "bad.bin", "TOY1 nonsense\n");
  CHECK_THROWS_AS(load_model(dir / "bad.bin"), DataError);

  const auto data = synth_dataset(6, 8, 6);
  write_dataset(dir / "ds", data);
  const auto back = read_dataset(dir / "ds");
  REQUIRE(back.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(back[i].chart == data[i].chart);
    CHECK(back[i].question == data[i].question);
    CHECK(back[i].answer == data[i].answer);
    CHECK(back[i].target_gaze[0] == doctest::Approx(data[i].target_gaze[0]).epsilon(1e-6));
  }

  std::vector<EpochStats> hist(2);
  hist[0].epoch = 1;
  hist[1].epoch = 2;
  hist[1].accuracy = 0.5;
  write_history_csv(dir / "h.csv", hist);
  const std::string text = testing::slurp(dir / "h.csv");
  CHECK(text.rfind("epoch,accuracy,lm_loss,attn_loss,cc,kl,sim\n1,", 0) == 0);
  CHECK(text.find("\n2,0.5,") != std::string::npos);
}
