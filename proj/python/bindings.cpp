#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "chartgaze/attention.hpp"
#include "chartgaze/gaze.hpp"
#include "chartgaze/grid.hpp"
#include "chartgaze/io.hpp"
#include "chartgaze/losses.hpp"
#include "chartgaze/metrics.hpp"
#include "chartgaze/perturb.hpp"
#include "chartgaze/toy.hpp"

namespace py = pybind11;
using namespace chartgaze;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Map2D to_map(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  const auto h = static_cast<std::size_t>(a.shape(0));
  const auto w = static_cast<std::size_t>(a.shape(1));
  return Map2D(h, w, std::vector<double>(a.data(), a.data() + h * w));
}

Array from_map(const Map2D& m) {
  Array out({m.height(), m.width()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

AttnTensor to_tensor(const Array& a) {
  if (a.ndim() != 4) throw py::value_error("expected a 4-D array (layers, heads, tokens, patches)");
  const auto n = static_cast<std::size_t>(a.size());
  return AttnTensor(a.shape(0), a.shape(1), a.shape(2), a.shape(3),
                    std::vector<double>(a.data(), a.data() + n));
}

Array from_tensor(const AttnTensor& t) {
  Array out({t.layers(), t.heads(), t.tokens(), t.patches()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Array from_vector(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// Rows of (x_px, y_px, start_us, duration_ms).
std::vector<gaze::Fixation> to_fixations(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 4) throw py::value_error("fixations must have shape (n, 4)");
  std::vector<gaze::Fixation> fx(a.shape(0));
  const auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    fx[i] = {r(i, 0), r(i, 1), static_cast<std::int64_t>(r(i, 2)), r(i, 3)};
  }
  return fx;
}

Array from_fixations(const std::vector<gaze::Fixation>& fx) {
  Array out({fx.size(), std::size_t{4}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < fx.size(); ++i) {
    w(i, 0) = fx[i].x_px;
    w(i, 1) = fx[i].y_px;
    w(i, 2) = static_cast<double>(fx[i].start_us);
    w(i, 3) = fx[i].duration_ms;
  }
  return out;
}

py::dict report_dict(const metrics::MetricReport& r) {
  py::dict d;
  d["cc"] = r.cc;
  d["kl"] = r.kl;
  d["sim"] = r.sim;
  return d;
}

loss::LossConfig loss_config(double alpha, double gamma, double lambda_dice, double lambda_bce,
                             double eps) {
  loss::LossConfig c;
  c.alpha = alpha;
  c.gamma = gamma;
  c.lambda_dice = lambda_dice;
  c.lambda_bce = lambda_bce;
  c.eps = eps;
  return c;
}

perturb::BinaryMask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D boolean mask");
  perturb::BinaryMask m(a.shape(0), a.shape(1));
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, a.data()[i]);
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of the chartgaze package";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

  // grids
  m.def("minmax_normalize", [](const Array& a) { return from_map(minmax_normalize(to_map(a))); },
        py::arg("map"));
  m.def("dist_normalize",
        [](const Array& a, double eps) { return from_map(dist_normalize(to_map(a), eps).map()); },
        py::arg("map"), py::arg("eps_floor") = kDefaultEpsFloor);
  m.def("bilinear_resize",
        [](const Array& a, std::size_t h, std::size_t w) {
          return from_map(bilinear_resize(to_map(a), h, w));
        },
        py::arg("map"), py::arg("height"), py::arg("width"));

  // file formats
  m.def("read_gam", [](const std::string& p) { return from_map(io::read_gam(p)); }, py::arg("path"));
  m.def("write_gam", [](const std::string& p, const Array& a) { io::write_gam(p, to_map(a)); },
        py::arg("path"), py::arg("map"));
  m.def("read_atn", [](const std::string& p) { return from_tensor(io::read_atn(p)); },
        py::arg("path"));
  m.def("write_atn", [](const std::string& p, const Array& a) { io::write_atn(p, to_tensor(a)); },
        py::arg("path"), py::arg("tensor"));

  // gaze pipeline
  m.def("detect_fixations",
        [](const Array& samples, std::size_t height, std::size_t width, double dispersion,
           double min_dur) {
          if (samples.ndim() != 2 || samples.shape(1) != 4) {
            throw py::value_error("samples must have shape (n, 4): t_us, x_px, y_px, valid");
          }
          const auto r = samples.unchecked<2>();
          std::vector<gaze::GazeSample> s(samples.shape(0));
          for (py::ssize_t i = 0; i < samples.shape(0); ++i) {
            s[i] = {static_cast<std::int64_t>(r(i, 0)), r(i, 1), r(i, 2), r(i, 3) != 0.0};
          }
          return from_fixations(
              gaze::detect_fixations_idt(gaze::filter_samples(s, height, width), dispersion, min_dur));
        },
        py::arg("samples"), py::arg("height"), py::arg("width"),
        py::arg("dispersion") = gaze::kDefaultDispersionPx,
        py::arg("min_dur") = gaze::kDefaultMinDurationMs,
        "Filter raw samples to the screen and run I-DT. Returns (x_px, y_px, start_us, duration_ms) rows.");
  m.def("gaussian_blur",
        [](const Array& a, double sigma) { return from_map(gaze::gaussian_blur(to_map(a), sigma)); },
        py::arg("map"), py::arg("sigma"));
  m.def("build_gaze_map",
        [](const Array& fx, std::size_t h, std::size_t w, double sigma) {
          return from_map(gaze::build_gaze_map(to_fixations(fx), h, w, sigma));
        },
        py::arg("fixations"), py::arg("height"), py::arg("width"),
        py::arg("sigma") = gaze::kDefaultSigmaPx);

  // attention
  m.def("aggregate_attention",
        [](const Array& t, std::size_t m_layers) {
          return from_vector(attention::aggregate_attention(to_tensor(t), m_layers));
        },
        py::arg("tensor"), py::arg("m_layers"));
  m.def("attention_map",
        [](const Array& t, std::size_t m_layers, std::tuple<std::size_t, std::size_t> grid,
           std::tuple<std::size_t, std::size_t> size) {
          const attention::PatchGrid pg{std::get<0>(grid), std::get<1>(grid)};
          const auto v = attention::aggregate_attention(to_tensor(t), m_layers);
          return from_map(attention::to_image_map(attention::to_patch_map(v, pg), std::get<0>(size),
                                                  std::get<1>(size)));
        },
        py::arg("tensor"), py::arg("m_layers"), py::arg("grid"), py::arg("size"));

  // metrics
  m.def("cc", [](const Array& g, const Array& a) { return metrics::cc(to_map(g), to_map(a)); },
        py::arg("g"), py::arg("a"));
  m.def("kl_div", [](const Array& g, const Array& a) { return metrics::kl_div(to_map(g), to_map(a)); },
        py::arg("g"), py::arg("a"));
  m.def("sim", [](const Array& g, const Array& a) { return metrics::sim(to_map(g), to_map(a)); },
        py::arg("g"), py::arg("a"));
  m.def("metrics",
        [](const Array& g, const Array& a) { return report_dict(metrics::report(to_map(g), to_map(a))); },
        py::arg("g"), py::arg("a"));

  // losses
  m.def("loss",
        [](const std::string& kind, const Array& g, const Array& a, double alpha, double gamma,
           double lambda_dice, double lambda_bce, double eps) {
          const auto r = loss::evaluate(loss::parse_loss_kind(kind), to_map(g), to_map(a),
                                        loss_config(alpha, gamma, lambda_dice, lambda_bce, eps));
          return py::make_tuple(r.loss, from_map(r.grad));
        },
        py::arg("kind"), py::arg("g"), py::arg("a"), py::arg("alpha") = 1.1, py::arg("gamma") = 2.0,
        py::arg("lambda_dice") = 100.0, py::arg("lambda_bce") = 1.0, py::arg("eps") = 1e-8,
        "Returns (loss, dloss/da). kind is one of wmse, kld, focal, dicebce.");
  m.def("finite_diff_check",
        [](const std::string& kind, const Array& g, const Array& a, double h) {
          return loss::finite_diff_check(loss::parse_loss_kind(kind), to_map(g), to_map(a), {}, h);
        },
        py::arg("kind"), py::arg("g"), py::arg("a"), py::arg("h") = 1e-5);

  // perturbation
  m.def("gaze_mask",
        [](const Array& g, double threshold) {
          const auto mask = perturb::gaze_mask(to_map(g), threshold);
          py::array_t<bool> out({mask.height(), mask.width()});
          for (std::size_t i = 0; i < mask.size(); ++i) out.mutable_data()[i] = mask[i];
          return out;
        },
        py::arg("g"), py::arg("threshold") = perturb::kDefaultThreshold);
  m.def("apply_mask",
        [](const Array& img, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask,
           bool invert) { return from_map(perturb::apply_mask(to_map(img), to_mask(mask), invert)); },
        py::arg("img"), py::arg("mask"), py::arg("invert") = false);
  m.def("apply_region_blur",
        [](const Array& img, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask,
           std::size_t kernel, double sigma, bool invert) {
          return from_map(perturb::apply_region_blur(to_map(img), to_mask(mask), kernel, sigma, invert));
        },
        py::arg("img"), py::arg("mask"), py::arg("kernel") = perturb::kDefaultKernelSize,
        py::arg("sigma") = perturb::kDefaultBlurSigma, py::arg("invert") = false);

  // toy model
  m.def("synth_dataset",
        [](std::size_t n, std::size_t grid, std::uint64_t seed) {
          py::list out;
          for (const auto& inst : toy::synth_dataset(n, grid, seed)) {
            py::dict d;
            d["chart"] = from_map(inst.chart);
            d["question"] = inst.question;
            d["ref_a"] = inst.ref_a;
            d["ref_b"] = inst.ref_b;
            d["answer"] = inst.answer;
            d["gaze"] = from_map(inst.target_gaze);
            out.append(d);
          }
          return out;
        },
        py::arg("n"), py::arg("grid") = 8, py::arg("seed") = 1);
  m.def("train_toy",
        [](const std::string& config, std::size_t n, std::size_t grid, std::size_t workers) {
          const auto cfg = toy::parse_train_config(config);
          const auto data = toy::synth_dataset(n, grid, cfg.seed, cfg.sigma);
          toy::ModelDims dims;
          dims.grid = grid;
          cfg.validate(dims);
          std::optional<toy::TrainResult> r;
          {
            py::gil_scoped_release release;
            r.emplace(toy::train(cfg, data, dims, workers));
          }
          py::list history;
          for (const auto& s : r->history) {
            py::dict d = report_dict(s.metrics);
            d["epoch"] = s.epoch;
            d["accuracy"] = s.accuracy;
            d["lm_loss"] = s.lm_loss;
            d["attn_loss"] = s.attn_loss;
            history.append(d);
          }
          const auto p = r->model.params();
          return py::make_tuple(from_vector(std::vector<double>(p.begin(), p.end())), history);
        },
        py::arg("config") = "", py::arg("n") = 1000, py::arg("grid") = 8, py::arg("workers") = 1,
        "Train on a synthesized dataset. `config` uses the key = value format. "
        "Returns (parameters, per-epoch history).");
}
