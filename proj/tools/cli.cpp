#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "chartgaze/attention.hpp"
#include "chartgaze/gaze.hpp"
#include "chartgaze/grid.hpp"
#include "chartgaze/io.hpp"
#include "chartgaze/losses.hpp"
#include "chartgaze/metrics.hpp"
#include "chartgaze/perturb.hpp"
#include "chartgaze/rng.hpp"
#include "chartgaze/toy.hpp"

namespace chartgaze::cli {
namespace {

namespace fs = std::filesystem;

struct Size {
  std::size_t h = 0;
  std::size_t w = 0;
};

std::optional<Size> parse_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == text.size()) return std::nullopt;
  auto number = [](const std::string& s) -> std::optional<std::size_t> {
    if (s.empty() || s.size() > 9) return std::nullopt;
    for (char c : s) {
      if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    }
    const auto v = std::stoul(s);
    if (v == 0) return std::nullopt;
    return v;
  };
  const auto h = number(text.substr(0, x));
  const auto w = number(text.substr(x + 1));
  if (!h || !w) return std::nullopt;
  return Size{*h, *w};
}

const CLI::Validator kSizeFormat(
    [](std::string& s) -> std::string {
      return parse_size(s) ? std::string() : "expected HxW with positive integers, got '" + s + "'";
    },
    "HxW");

std::string extension(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

CLI::Validator extension_in(std::vector<std::string> allowed) {
  std::string desc;
  for (const auto& a : allowed) desc += (desc.empty() ? "" : "|") + a;
  return CLI::Validator(
      [allowed](std::string& s) -> std::string {
        const auto e = extension(s);
        if (std::find(allowed.begin(), allowed.end(), e) != allowed.end()) return {};
        return "unsupported file extension '" + e + "'";
      },
      desc);
}

// Maps go to GAM1 as-is, to PGM min-max stretched, to PNG colorized.
void write_map(const fs::path& path, const Map2D& m) {
  const auto e = extension(path);
  if (e == ".gam") {
    io::write_gam(path, m);
  } else if (e == ".pgm") {
    io::write_pgm(path, m);
  } else {
    io::write_png(path, io::colorize(m));
  }
}

io::Image read_image(const fs::path& path) {
  if (extension(path) == ".pgm") return io::Image{{io::read_pgm(path)}};
  return io::read_png(path);
}

void write_image(const fs::path& path, const io::Image& img) {
  if (extension(path) == ".pgm") {
    if (img.planes.size() != 1) throw DataError("PGM output needs a single-plane image");
    io::write_pgm_raw(path, img.planes.front());
  } else {
    io::write_png(path, img);
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

Map2D random_map(Rng& rng, std::size_t h, std::size_t w, double lo, double hi) {
  Map2D m(h, w);
  for (double& v : m.values()) v = lo + (hi - lo) * rng.uniform();
  return m;
}

// Worst relative error of analytic vs central-difference gradients over
// `instances` random 8x8 problems.
double grad_check(const std::string& kind, std::uint64_t seed, std::size_t instances) {
  constexpr double kStep = 1e-5;
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t n = 0; n < instances; ++n) {
    if (kind == "lm") {
      const std::vector<double> logits{4.0 * rng.normal(), 4.0 * rng.normal()};
      const bool answer = rng.below(2) == 1;
      const auto an = toy::lm_loss_from_logits(logits, answer);
      for (std::size_t k = 0; k < 2; ++k) {
        auto up = logits, down = logits;
        up[k] += kStep;
        down[k] -= kStep;
        const double num = (toy::lm_loss_from_logits(up, answer).loss -
                            toy::lm_loss_from_logits(down, answer).loss) /
                           (2.0 * kStep);
        worst = std::max(worst, std::abs(num - an.grad[k]) / (std::abs(an.grad[k]) + 1e-8));
      }
      continue;
    }
    const auto k = loss::parse_loss_kind(kind);
    Map2D g = random_map(rng, 8, 8, 0.0, 1.0);
    Map2D a = random_map(rng, 8, 8, 0.02, 0.98);
    if (k == loss::LossKind::kKld) {
      g = dist_normalize(g).map();
      a = dist_normalize(a).map();
    }
    worst = std::max(worst, loss::finite_diff_check(k, g, a, loss::LossConfig{}, kStep));
  }
  return worst;
}

std::vector<gaze::Session> read_session_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && extension(entry.path()) == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<gaze::Session> sessions;
  for (const auto& f : files) {
    gaze::Session s;
    s.id = f.stem().string();
    s.fixations = gaze::read_fixations_csv(f);
    sessions.push_back(std::move(s));
  }
  return sessions;
}

struct Options {
  // gazemap
  std::string fixations, samples, size, out;
  double sigma = gaze::kDefaultSigmaPx;
  double dispersion = gaze::kDefaultDispersionPx;
  double min_dur = gaze::kDefaultMinDurationMs;
  std::string fixations_out;
  // filter-sessions
  std::string session_dir;
  double drop_pct = 3.0;
  // attnmap
  std::string attn, grid, out_size, split;
  std::size_t layers = 0;
  // metrics / loss
  std::string g, a, grad_out, kind;
  bool json = false;
  loss::LossConfig lcfg;
  // grad-check
  std::uint64_t seed = 1;
  std::size_t instances = 20;
  // perturb
  std::string img, gaze_map, mode = "mask";
  bool invert = false;
  double threshold = perturb::kDefaultThreshold;
  std::size_t kernel = perturb::kDefaultKernelSize;
  double blur_sigma = perturb::kDefaultBlurSigma;
  // synth / train-toy
  std::size_t n = 1000;
  std::size_t synth_grid = 8;
  std::string config, history, data;
  std::size_t workers = 1;
  // render
  std::string in, overlay;
  double alpha = 0.6;
};

int cmd_gazemap(const Options& o, std::ostream& out) {
  const Size size = *parse_size(o.size);
  std::vector<gaze::Fixation> fx;
  if (!o.fixations.empty()) {
    fx = gaze::read_fixations_csv(o.fixations);
  } else {
    const auto samples = gaze::filter_samples(gaze::read_samples_csv(o.samples), size.h, size.w);
    fx = gaze::detect_fixations_idt(samples, o.dispersion, o.min_dur);
    if (!o.fixations_out.empty()) gaze::write_fixations_csv(o.fixations_out, fx);
  }
  write_map(o.out, gaze::build_gaze_map(fx, size.h, size.w, o.sigma));
  out << "fixations=" << fx.size() << "\n";
  return kExitOk;
}

int cmd_filter_sessions(const Options& o, std::ostream& out) {
  const auto sessions = read_session_dir(o.session_dir);
  const auto kept = gaze::filter_sessions(sessions, o.drop_pct);
  std::ofstream f(o.out, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + o.out);
  for (const auto& s : kept) f << s.id << "\n";
  if (!f) throw DataError("write failed: " + o.out);
  out << "kept=" << kept.size() << " dropped=" << sessions.size() - kept.size() << "\n";
  return kExitOk;
}

int cmd_attnmap(const Options& o, std::ostream& out, std::ostream& err) {
  const AttnTensor t = io::read_atn(o.attn);
  const auto check = validate_attention(t);
  if (!check.ok()) {
    err << "warning: " << check.overfull_rows << " attention rows sum above 1 and "
        << check.out_of_range << " entries lie outside [0, 1]\n";
  }
  const auto grid = attention::parse_grid(o.grid);
  if (grid.patches() != t.patches()) {
    throw DataError("grid " + o.grid + " has " + std::to_string(grid.patches()) +
                    " patches but the tensor has " + std::to_string(t.patches()));
  }
  const Size size = *parse_size(o.out_size);
  if (o.split.empty()) {
    const auto v = attention::aggregate_attention(t, o.layers);
    write_map(o.out, attention::to_image_map(attention::to_patch_map(v, grid), size.h, size.w));
    out << "wrote " << o.out << "\n";
    return kExitOk;
  }
  const auto axis = o.split == "layer"  ? attention::Axis::kLayer
                    : o.split == "head" ? attention::Axis::kHead
                                        : attention::Axis::kToken;
  const auto parts = attention::aggregate_attention_split(t, o.layers, axis);
  const fs::path base(o.out);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    fs::path p = base.parent_path() /
                 (base.stem().string() + "_" + o.split + std::to_string(k) + base.extension().string());
    write_map(p, attention::to_image_map(attention::to_patch_map(parts[k], grid), size.h, size.w));
    out << "wrote " << p.string() << "\n";
  }
  return kExitOk;
}

int cmd_metrics(const Options& o, std::ostream& out) {
  const Map2D g = io::read_gam(o.g);
  const Map2D a = io::read_gam(o.a);
  if (!g.same_shape(a)) throw DataError("maps differ in shape");
  metrics::MetricReport r;
  try {
    r = metrics::report(g, a);
  } catch (const std::domain_error& e) {
    throw DataError(e.what());
  }
  if (o.json) {
    nlohmann::ordered_json j;
    j["cc"] = r.cc;
    j["kl"] = r.kl;
    j["sim"] = r.sim;
    out << j.dump() << "\n";
  } else {
    out << "cc=" << fmt(r.cc) << " kl=" << fmt(r.kl) << " sim=" << fmt(r.sim) << "\n";
  }
  return kExitOk;
}

int cmd_loss(const Options& o, std::ostream& out) {
  const auto kind = loss::parse_loss_kind(o.kind);
  Map2D g = io::read_gam(o.g);
  Map2D a = io::read_gam(o.a);
  if (!g.same_shape(a)) throw DataError("maps differ in shape");
  if (kind == loss::LossKind::kKld) {
    g = dist_normalize(g).map();
    a = dist_normalize(a).map();
  }
  auto r = [&] {
    try {
      return loss::evaluate(kind, g, a, o.lcfg);
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what());
    }
  }();
  out << "loss=" << fmt(r.loss * o.lcfg.scale) << "\n";
  if (!o.grad_out.empty()) {
    for (double& v : r.grad.values()) v *= o.lcfg.scale;
    io::write_gam(o.grad_out, r.grad);
  }
  return kExitOk;
}

int cmd_perturb(const Options& o, std::ostream& out) {
  io::Image img = read_image(o.img);
  Map2D g = io::read_gam(o.gaze_map);
  if (g.height() != img.height() || g.width() != img.width()) {
    g = minmax_normalize(bilinear_resize(g, img.height(), img.width()));
  }
  const auto mask = perturb::gaze_mask(g, o.threshold);
  for (auto& plane : img.planes) {
    plane = o.mode == "mask" ? perturb::apply_mask(plane, mask, o.invert)
                             : perturb::apply_region_blur(plane, mask, o.kernel, o.blur_sigma, o.invert);
  }
  write_image(o.out, img);
  const std::size_t selected = o.invert ? mask.size() - mask.count() : mask.count();
  out << "selected=" << selected << " of " << mask.size() << "\n";
  return kExitOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
  const auto data = toy::synth_dataset(o.n, o.synth_grid, o.seed);
  toy::write_dataset(o.out, data);
  out << "instances=" << data.size() << "\n";
  return kExitOk;
}

int cmd_train_toy(const Options& o, std::ostream& out) {
  toy::TrainConfig cfg;
  if (!o.config.empty()) cfg = toy::read_train_config(o.config);
  std::vector<toy::SynthInstance> data =
      o.data.empty() ? toy::synth_dataset(o.n, o.synth_grid, cfg.seed, cfg.sigma)
                     : toy::read_dataset(o.data);
  if (data.empty()) throw DataError("empty training set");
  toy::ModelDims dims;
  dims.grid = data.front().chart.height();
  cfg.validate(dims);
  const auto result = toy::train(cfg, data, dims, o.workers);
  toy::save_model(o.out, result.model);
  if (!o.history.empty()) toy::write_history_csv(o.history, result.history);
  const auto& last = result.history.back();
  out << "epochs=" << result.history.size() << " accuracy=" << fmt(last.accuracy)
      << " lm_loss=" << fmt(last.lm_loss) << " attn_loss=" << fmt(last.attn_loss) << "\n";
  return kExitOk;
}

int cmd_render(const Options& o, std::ostream& out) {
  const Map2D m = io::read_gam(o.in);
  if (o.overlay.empty()) {
    write_map(o.out, m);
  } else {
    write_image(o.out, io::overlay_heatmap(m, read_image(o.overlay), o.alpha));
  }
  out << "wrote " << o.out << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gaze maps, attention maps, alignment losses and a toy gaze-supervised model",
               "chartgaze"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Options o;

  const auto in_file = CLI::ExistingFile;
  const auto map_out = extension_in({".gam", ".pgm", ".png"});
  const auto img_ext = extension_in({".pgm", ".png"});

  auto* gm = app.add_subcommand("gazemap", "Build a gaze map from fixations or raw samples");
  auto* fx_opt = gm->add_option("--fixations", o.fixations, "Fixation CSV (x_px,y_px,start_us,duration_ms)")
                     ->check(in_file);
  auto* smp_opt = gm->add_option("--samples", o.samples, "Raw sample CSV (t_us,x_px,y_px,valid)")
                      ->check(in_file);
  fx_opt->excludes(smp_opt);
  gm->add_option("--size", o.size, "Output size HxW")->required()->check(kSizeFormat);
  gm->add_option("--sigma", o.sigma, "Gaussian sigma in pixels")->check(CLI::PositiveNumber);
  gm->add_option("--dispersion", o.dispersion, "I-DT dispersion threshold in pixels")
      ->check(CLI::PositiveNumber);
  gm->add_option("--min-dur", o.min_dur, "I-DT minimum fixation duration in ms")
      ->check(CLI::PositiveNumber);
  gm->add_option("--fixations-out", o.fixations_out, "Also write detected fixations (with --samples)");
  gm->add_option("--out", o.out, "Output map (.gam, .pgm or .png)")->required()->check(map_out);

  auto* fs_cmd = app.add_subcommand("filter-sessions", "Drop the sessions with the least viewing time");
  fs_cmd->add_option("--fixation-dir", o.session_dir, "Directory of per-session fixation CSVs")
      ->required()
      ->check(CLI::ExistingDirectory);
  fs_cmd->add_option("--drop-pct", o.drop_pct, "Percentage of sessions to drop")
      ->check(CLI::Range(0.0, 100.0));
  fs_cmd->add_option("--out", o.out, "Text file receiving the kept session ids")->required();

  auto* am = app.add_subcommand("attnmap", "Aggregate an attention tensor into an image map");
  am->add_option("--attn", o.attn, "ATN1 attention tensor")->required()->check(in_file);
  am->add_option("--layers", o.layers, "Number of leading layers to average")
      ->required()
      ->check(CLI::PositiveNumber);
  am->add_option("--grid", o.grid, "Patch grid RxC")->required()->check(kSizeFormat);
  am->add_option("--out-size", o.out_size, "Image size HxW")->required()->check(kSizeFormat);
  am->add_option("--split", o.split, "Keep one axis and write one map per index")
      ->check(CLI::IsMember({"layer", "head", "token"}));
  am->add_option("--out", o.out, "Output map (.gam, .pgm or .png)")->required()->check(map_out);

  auto* mt = app.add_subcommand("metrics", "CC, KL and SIM between a gaze map and an attention map");
  mt->add_option("--g", o.g, "Gaze map (GAM1)")->required()->check(in_file);
  mt->add_option("--a", o.a, "Attention map (GAM1)")->required()->check(in_file);
  mt->add_flag("--json", o.json, "Print a JSON object");

  auto* ls = app.add_subcommand("loss", "Evaluate a gaze-alignment loss");
  ls->add_option("--kind", o.kind, "Loss kind")
      ->required()
      ->check(CLI::IsMember({"wmse", "kld", "focal", "dicebce"}));
  ls->add_option("--g", o.g, "Gaze map (GAM1)")->required()->check(in_file);
  ls->add_option("--a", o.a, "Attention map (GAM1)")->required()->check(in_file);
  ls->add_option("--alpha", o.lcfg.alpha, "W-MSE weight offset (> 1)")
      ->check(CLI::Range(1.0, 1e300));
  ls->add_option("--gamma", o.lcfg.gamma, "Focal exponent")->check(CLI::NonNegativeNumber);
  ls->add_option("--lambda-dice", o.lcfg.lambda_dice, "Dice weight")->check(CLI::NonNegativeNumber);
  ls->add_option("--lambda-bce", o.lcfg.lambda_bce, "BCE weight")->check(CLI::NonNegativeNumber);
  ls->add_option("--eps", o.lcfg.eps, "Smoothing / denominator guard")->check(CLI::PositiveNumber);
  ls->add_option("--scale", o.lcfg.scale, "Magnitude-alignment factor")->check(CLI::NonNegativeNumber);
  ls->add_option("--grad-out", o.grad_out, "Write dLoss/dA as GAM1");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the loss gradients");
  gc->add_option("--kind", o.kind, "Loss kind")
      ->required()
      ->check(CLI::IsMember({"wmse", "kld", "focal", "dicebce", "lm"}));
  gc->add_option("--seed", o.seed, "Random seed");
  gc->add_option("--instances", o.instances, "Number of random 8x8 instances")
      ->check(CLI::PositiveNumber);

  auto* pt = app.add_subcommand("perturb", "Mask or blur the gaze-selected region of an image");
  pt->add_option("--img", o.img, "Input image (.pgm or .png)")->required()->check(in_file & img_ext);
  pt->add_option("--gaze", o.gaze_map, "Gaze map (GAM1), resized to the image if needed")
      ->required()
      ->check(in_file);
  pt->add_option("--mode", o.mode, "Perturbation")->check(CLI::IsMember({"mask", "blur"}));
  pt->add_flag("--invert", o.invert, "Perturb the complement of the gaze region");
  pt->add_option("--threshold", o.threshold, "Gaze threshold in (0, 1)")
      ->check(CLI::Range(0.0, 1.0));
  pt->add_option("--kernel", o.kernel, "Blur kernel size (odd)")->check(CLI::PositiveNumber);
  pt->add_option("--sigma", o.blur_sigma, "Blur sigma in pixels")->check(CLI::PositiveNumber);
  pt->add_option("--out", o.out, "Output image (.pgm or .png)")->required()->check(img_ext);

  auto* sy = app.add_subcommand("synth", "Write a synthetic chart question dataset");
  sy->add_option("--n", o.n, "Number of instances")->check(CLI::PositiveNumber);
  sy->add_option("--grid", o.synth_grid, "Chart grid size")->check(CLI::Range(2, 64));
  sy->add_option("--seed", o.seed, "Random seed");
  sy->add_option("--out", o.out, "Output directory")->required();

  auto* tt = app.add_subcommand("train-toy", "Train the toy gaze-supervised model");
  tt->add_option("--config", o.config, "key = value training config")->check(in_file);
  tt->add_option("--data", o.data, "Dataset directory written by synth (default: synthesize)")
      ->check(CLI::ExistingDirectory);
  tt->add_option("--n", o.n, "Instances to synthesize without --data")->check(CLI::PositiveNumber);
  tt->add_option("--grid", o.synth_grid, "Grid to synthesize without --data")->check(CLI::Range(2, 64));
  tt->add_option("--workers", o.workers, "Worker threads (results do not depend on it)")
      ->check(CLI::Range(1, 256));
  tt->add_option("--out", o.out, "Model file")->required();
  tt->add_option("--history", o.history, "Per-epoch history CSV");

  auto* rd = app.add_subcommand("render", "Render a map as a heatmap, optionally over a chart");
  rd->add_option("--in", o.in, "Map (GAM1)")->required()->check(in_file);
  rd->add_option("--overlay", o.overlay, "Chart image (.pgm or .png) to draw under the heatmap")
      ->check(in_file & img_ext);
  rd->add_option("--alpha", o.alpha, "Heatmap opacity")->check(CLI::Range(0.0, 1.0));
  rd->add_option("--out", o.out, "Output (.png; .pgm/.gam without --overlay)")->required()->check(map_out);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    if (gm->parsed() && o.fixations.empty() && o.samples.empty()) {
      throw CLI::ValidationError("gazemap", "one of --fixations or --samples is required");
    }
    if (pt->parsed() && (o.threshold <= 0.0 || o.threshold >= 1.0)) {
      throw CLI::ValidationError("--threshold", "must lie strictly inside (0, 1)");
    }
    if (pt->parsed() && o.kernel % 2 == 0) {
      throw CLI::ValidationError("--kernel", "must be odd");
    }
    if (fs_cmd->parsed() && o.drop_pct >= 100.0) {
      throw CLI::ValidationError("--drop-pct", "must be below 100");
    }
    if (ls->parsed() && !(o.lcfg.alpha > 1.0)) {
      throw CLI::ValidationError("--alpha", "must be > 1");
    }
    if (rd->parsed() && !o.overlay.empty() && extension(o.out) != ".png") {
      throw CLI::ValidationError("--out", "overlay output must be .png");
    }
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gm->parsed()) return cmd_gazemap(o, out);
    if (fs_cmd->parsed()) return cmd_filter_sessions(o, out);
    if (am->parsed()) return cmd_attnmap(o, out, err);
    if (mt->parsed()) return cmd_metrics(o, out);
    if (ls->parsed()) return cmd_loss(o, out);
    if (gc->parsed()) {
      out << "max_rel_error=" << fmt(grad_check(o.kind, o.seed, o.instances)) << "\n";
      return kExitOk;
    }
    if (pt->parsed()) return cmd_perturb(o, out);
    if (sy->parsed()) return cmd_synth(o, out);
    if (tt->parsed()) return cmd_train_toy(o, out);
    if (rd->parsed()) return cmd_render(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace chartgaze::cli
