#include "chartgaze/toy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "chartgaze/gaze.hpp"
#include "chartgaze/io.hpp"
#include "chartgaze/perturb.hpp"
#include "chartgaze/rng.hpp"

namespace chartgaze::toy {

// ---------------------------------------------------------------------------
// Synthetic charts

namespace {

bool question_truth(QuestionType type, int ha, int hb) {
  switch (type) {
    case QuestionType::kTaller: return ha > hb;
    case QuestionType::kShorter: return ha < hb;
    case QuestionType::kRising: return hb > ha;
    case QuestionType::kFalling: return hb < ha;
  }
  return false;
}

const char* type_name(QuestionType t) {
  switch (t) {
    case QuestionType::kTaller: return "taller";
    case QuestionType::kShorter: return "shorter";
    case QuestionType::kRising: return "rising";
    case QuestionType::kFalling: return "falling";
  }
  return "?";
}

QuestionType parse_type(const std::string& s) {
  for (int t = 0; t < kQuestionTypes; ++t) {
    if (s == type_name(static_cast<QuestionType>(t))) return static_cast<QuestionType>(t);
  }
  throw DataError("unknown question type '" + s + "'");
}

Map2D bar_chart(const std::vector<int>& heights, std::size_t grid) {
  Map2D chart(grid, grid, 0.0);
  for (std::size_t c = 0; c < grid; ++c) {
    for (std::size_t r = grid - static_cast<std::size_t>(heights[c]); r < grid; ++r) {
      chart(r, c) = 1.0;
    }
  }
  return chart;
}

Map2D synth_gaze(const Map2D& chart, std::size_t a, std::size_t b, double sigma) {
  std::vector<gaze::Fixation> fixations;
  for (std::size_t bar : {a, b}) {
    for (std::size_t r = 0; r < chart.height(); ++r) {
      if (chart(r, bar) > 0.0) {
        fixations.push_back({static_cast<double>(bar), static_cast<double>(r), 0,
                             kSynthFixationMs});
      }
    }
  }
  return gaze::build_gaze_map(fixations, chart.height(), chart.width(), sigma);
}

SynthInstance make_instance(QuestionType type, std::size_t a, std::size_t b,
                            const std::vector<int>& heights, double sigma) {
  const std::size_t grid = heights.size();
  Map2D chart = bar_chart(heights, grid);
  Map2D target = synth_gaze(chart, a, b, sigma);
  return SynthInstance{std::move(chart),
                       {static_cast<int>(type), bar_token(a), bar_token(b)},
                       type,
                       a,
                       b,
                       question_truth(type, heights[a], heights[b]),
                       std::move(target)};
}

}  // namespace

std::vector<SynthInstance> synth_dataset(std::size_t n, std::size_t grid, std::uint64_t seed,
                                         double gaze_sigma) {
  if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
  if (grid < 4) throw std::invalid_argument("synth_dataset: grid must be >= 4");
  if (!(gaze_sigma > 0.0)) throw std::invalid_argument("synth_dataset: sigma must be > 0");

  Rng rng(seed);
  std::vector<char> wanted(n, 0);
  std::fill(wanted.begin(), wanted.begin() + static_cast<std::ptrdiff_t>(n / 2), 1);
  rng.shuffle(wanted.begin(), wanted.end());

  std::vector<SynthInstance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto type = static_cast<QuestionType>(rng.below(kQuestionTypes));
    std::size_t a = 0, b = 0;
    if (type == QuestionType::kTaller || type == QuestionType::kShorter) {
      a = rng.below(grid);
      b = rng.below(grid - 1);
      if (b >= a) ++b;
    } else {
      a = rng.below(grid - 1);
      b = a + 1;
    }
    std::vector<int> heights(grid);
    for (auto& h : heights) h = 1 + static_cast<int>(rng.below(grid));
    while (heights[b] == heights[a]) heights[b] = 1 + static_cast<int>(rng.below(grid));
    if (question_truth(type, heights[a], heights[b]) != (wanted[i] != 0)) {
      std::swap(heights[a], heights[b]);
    }
    out.push_back(make_instance(type, a, b, heights, gaze_sigma));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

Layout Layout::of(const ModelDims& dims) {
  if (dims.heads == 0 || dims.d_model % dims.heads != 0) {
    throw std::invalid_argument("d_model must be divisible by heads");
  }
  if (dims.layers == 0 || dims.hidden == 0 || dims.tokens == 0 || dims.grid == 0) {
    throw std::invalid_argument("model dimensions must be >= 1");
  }
  const std::size_t d = dims.d_model;
  Layout l;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t start = at;
    at += n;
    return start;
  };
  l.patch_w = take(d);
  l.patch_b = take(d);
  l.pos_row = take(dims.grid * d);
  l.pos_col = take(dims.grid * d);
  l.tok_emb = take(dims.vocab() * d);
  l.pos_txt = take(dims.tokens * d);
  for (std::size_t i = 0; i < dims.layers; ++i) {
    LayerBlock b{};
    b.wq = take(d * d);
    b.wk = take(d * d);
    b.wv = take(d * d);
    b.wo = take(d * d);
    l.layers.push_back(b);
  }
  l.w1 = take(dims.hidden * dims.tokens * d);
  l.b1 = take(dims.hidden);
  l.w2 = take(2 * dims.hidden);
  l.b2 = take(2);
  l.total = at;
  return l;
}

ToyModel::ToyModel(const ModelDims& dims, std::vector<double> params)
    : dims_(dims), layout_(Layout::of(dims)), params_(std::move(params)) {
  if (params_.size() != layout_.total) {
    throw std::invalid_argument("parameter count does not match model dimensions");
  }
}

ToyModel ToyModel::initialize(const ModelDims& dims, std::uint64_t seed) {
  const Layout l = Layout::of(dims);
  std::vector<double> p(l.total, 0.0);
  Rng rng(seed);
  auto fill = [&](std::size_t off, std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) p[off + i] = scale * rng.normal();
  };
  const std::size_t d = dims.d_model;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  fill(l.patch_w, d, 1.0);
  fill(l.pos_row, dims.grid * d, 0.5);
  fill(l.pos_col, dims.grid * d, 0.5);
  fill(l.tok_emb, dims.vocab() * d, 1.0);
  fill(l.pos_txt, dims.tokens * d, 0.5);
  for (const auto& b : l.layers) {
    fill(b.wq, d * d, inv_sqrt_d);
    fill(b.wk, d * d, inv_sqrt_d);
    fill(b.wv, d * d, inv_sqrt_d);
    fill(b.wo, d * d, 0.5 * inv_sqrt_d);
  }
  fill(l.w1, dims.hidden * dims.tokens * d, 1.0 / std::sqrt(static_cast<double>(dims.tokens * d)));
  fill(l.w2, 2 * dims.hidden, 1.0 / std::sqrt(static_cast<double>(dims.hidden)));
  return ToyModel(dims, std::move(p));
}

void save_model(const std::filesystem::path& path, const ToyModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  const auto& d = model.dims();
  out << "TOY1 " << d.grid << ' ' << d.d_model << ' ' << d.heads << ' ' << d.layers << ' '
      << d.hidden << ' ' << d.tokens << ' ' << model.params().size() << '\n';
  for (double v : model.params()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes, 8);
  }
  if (!out) throw DataError("write failed: " + path.string());
}

ToyModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream hs(line);
  std::string tag;
  ModelDims d;
  std::size_t count = 0;
  if (!(hs >> tag >> d.grid >> d.d_model >> d.heads >> d.layers >> d.hidden >> d.tokens >> count) ||
      tag != "TOY1") {
    throw DataError(path.string() + ": not a TOY1 model file");
  }
  std::vector<double> params(count);
  for (auto& v : params) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (in.gcount() != 8) throw DataError(path.string() + ": truncated parameters");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  try {
    return ToyModel(d, std::move(params));
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

// y = W x with W rows x cols row-major.
inline void matvec(const double* w, const double* x, double* y, std::size_t rows,
                   std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* wr = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

// Backward of y = W x: dW += dy x^T, dx += W^T dy.
inline void matvec_backward(const double* w, const double* x, const double* dy, double* dw,
                            double* dx, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    const double* wr = w + r * cols;
    double* dwr = dw + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      dwr[c] += g * x[c];
      dx[c] += wr[c] * g;
    }
  }
}

// Offset of patch-embedding basis vector b: patch_w, patch_b, pos_row[0..grid),
// pos_col[0..grid).
std::size_t patch_basis(const Layout& lay, std::size_t grid, std::size_t d, std::size_t b) {
  if (b == 0) return lay.patch_w;
  if (b == 1) return lay.patch_b;
  if (b < 2 + grid) return lay.pos_row + (b - 2) * d;
  return lay.pos_col + (b - 2 - grid) * d;
}

struct Workspace {
  explicit Workspace(const ModelDims& dims)
      : I(dims.patches()),
        T(dims.tokens),
        N(dims.patches() + dims.tokens),
        d(dims.d_model),
        H(dims.heads),
        dh(dims.head_dim()),
        L(dims.layers),
        hidden(dims.hidden),
        x((L + 1) * T * d),
        q(L * T * d),
        k(L * N * d),
        v(L * N * d),
        att(L * H * T * N),
        o(L * T * d),
        hid(hidden),
        nb(2 + 2 * dims.grid),
        kb(L * nb * d),
        vb(L * nb * d) {}

  std::size_t I, T, N, d, H, dh, L, hidden;
  std::vector<double> x, q, k, v, att, o, hid;
  std::array<double, 2> logits{}, probs{};
  // Per-layer key/value projections of the patch-embedding basis; they
  // depend on the parameters only.
  std::size_t nb;
  std::vector<double> kb, vb;

  std::size_t basis_grad_size() const { return 2 * L * nb * d; }

  double attention(std::size_t l, std::size_t h, std::size_t t, std::size_t j) const {
    return att[((l * H + h) * T + t) * N + j];
  }
};

void prepare_basis(const ToyModel& model, Workspace& ws) {
  const auto& lay = model.layout();
  const double* P = model.params().data();
  const std::size_t d = ws.d, grid = model.dims().grid;
  for (std::size_t l = 0; l < ws.L; ++l) {
    for (std::size_t b = 0; b < ws.nb; ++b) {
      const std::size_t at = patch_basis(lay, grid, d, b);
      matvec(P + lay.layers[l].wk, P + at, &ws.kb[(l * ws.nb + b) * d], d, d);
      matvec(P + lay.layers[l].wv, P + at, &ws.vb[(l * ws.nb + b) * d], d, d);
    }
  }
}

// Call prepare_basis() after every parameter change.
void run_forward(const ToyModel& model, const Map2D& chart, std::span<const int> question,
                 Workspace& ws) {
  const auto& dims = model.dims();
  const auto& lay = model.layout();
  const double* P = model.params().data();
  if (chart.height() != dims.grid || chart.width() != dims.grid) {
    throw std::invalid_argument("chart does not match the model grid");
  }
  if (question.size() != dims.tokens) {
    throw std::invalid_argument("question length does not match the model");
  }
  const std::size_t d = ws.d;

  const std::size_t grid = dims.grid;
  for (std::size_t t = 0; t < ws.T; ++t) {
    const int tok = question[t];
    if (tok < 0 || static_cast<std::size_t>(tok) >= dims.vocab()) {
      throw std::invalid_argument("question token out of vocabulary");
    }
    for (std::size_t c = 0; c < d; ++c) {
      ws.x[t * d + c] = P[lay.tok_emb + static_cast<std::size_t>(tok) * d + c] + P[lay.pos_txt + t * d + c];
    }
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(ws.dh));
  std::vector<double> scores(ws.N);
  for (std::size_t l = 0; l < ws.L; ++l) {
    const auto& blk = lay.layers[l];
    double* K = &ws.k[l * ws.N * d];
    double* V = &ws.v[l * ws.N * d];
    double* Q = &ws.q[l * ws.T * d];
    double* O = &ws.o[l * ws.T * d];
    const double* X = &ws.x[l * ws.T * d];
    double* Xn = &ws.x[(l + 1) * ws.T * d];
    // A patch embedding is chart[p] * patch_w + patch_b + pos_row[r] + pos_col[c],
    // so its key and value are sums of projected basis vectors.
    const double* kb = &ws.kb[l * ws.nb * d];
    const double* vb = &ws.vb[l * ws.nb * d];
    for (std::size_t p = 0; p < ws.I; ++p) {
      const std::size_t br = 2 + p / grid, bc = 2 + grid + p % grid;
      for (std::size_t c = 0; c < d; ++c) {
        K[p * d + c] = chart[p] * kb[c] + kb[d + c] + kb[br * d + c] + kb[bc * d + c];
        V[p * d + c] = chart[p] * vb[c] + vb[d + c] + vb[br * d + c] + vb[bc * d + c];
      }
    }
    for (std::size_t t = 0; t < ws.T; ++t) {
      matvec(P + blk.wk, X + t * d, K + (ws.I + t) * d, d, d);
      matvec(P + blk.wv, X + t * d, V + (ws.I + t) * d, d, d);
    }
    for (std::size_t t = 0; t < ws.T; ++t) matvec(P + blk.wq, X + t * d, Q + t * d, d, d);

    std::fill(O, O + ws.T * d, 0.0);
    for (std::size_t h = 0; h < ws.H; ++h) {
      const std::size_t off = h * ws.dh;
      for (std::size_t t = 0; t < ws.T; ++t) {
        double best = -INFINITY;
        for (std::size_t j = 0; j < ws.N; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < ws.dh; ++e) s += Q[t * d + off + e] * K[j * d + off + e];
          scores[j] = s * inv_sqrt;
          best = std::max(best, scores[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < ws.N; ++j) {
          scores[j] = std::exp(scores[j] - best);
          total += scores[j];
        }
        double* row = &ws.att[((l * ws.H + h) * ws.T + t) * ws.N];
        for (std::size_t j = 0; j < ws.N; ++j) {
          row[j] = scores[j] / total;
          for (std::size_t e = 0; e < ws.dh; ++e) O[t * d + off + e] += row[j] * V[j * d + off + e];
        }
      }
    }
    for (std::size_t t = 0; t < ws.T; ++t) {
      matvec(P + blk.wo, O + t * d, Xn + t * d, d, d);
      for (std::size_t c = 0; c < d; ++c) Xn[t * d + c] += X[t * d + c];
    }
  }

  const double* f = &ws.x[ws.L * ws.T * d];
  const std::size_t F = ws.T * d;
  for (std::size_t c = 0; c < ws.hidden; ++c) {
    double u = P[lay.b1 + c];
    const double* w = P + lay.w1 + c * F;
    for (std::size_t i = 0; i < F; ++i) u += w[i] * f[i];
    ws.hid[c] = std::tanh(u);
  }
  for (std::size_t r = 0; r < 2; ++r) {
    double u = P[lay.b2 + r];
    for (std::size_t c = 0; c < ws.hidden; ++c) u += P[lay.w2 + r * ws.hidden + c] * ws.hid[c];
    ws.logits[r] = u;
  }
  const double m = std::max(ws.logits[0], ws.logits[1]);
  const double e0 = std::exp(ws.logits[0] - m);
  const double e1 = std::exp(ws.logits[1] - m);
  ws.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
}

// `datt` (layers x heads x tokens x patches, may be empty) is the loss
// gradient with respect to the text->image attention weights. Gradients
// with respect to the projected patch basis are added to `basis_grad`
// (ws.basis_grad_size()); finish_basis_grad() maps them onto parameters.
void run_backward(const ToyModel& model, const Map2D& chart, std::span<const int> question,
                  const Workspace& ws, const std::array<double, 2>& dlogits,
                  std::span<const double> datt, std::span<double> grad,
                  std::span<double> basis_grad) {
  const auto& lay = model.layout();
  const double* P = model.params().data();
  double* G = grad.data();
  const std::size_t d = ws.d;
  const std::size_t F = ws.T * d;
  const double* f = &ws.x[ws.L * ws.T * d];

  std::vector<double> dx(F, 0.0);
  std::vector<double> dhid(ws.hidden, 0.0);
  for (std::size_t r = 0; r < 2; ++r) {
    G[lay.b2 + r] += dlogits[r];
    for (std::size_t c = 0; c < ws.hidden; ++c) {
      G[lay.w2 + r * ws.hidden + c] += dlogits[r] * ws.hid[c];
      dhid[c] += P[lay.w2 + r * ws.hidden + c] * dlogits[r];
    }
  }
  for (std::size_t c = 0; c < ws.hidden; ++c) {
    const double du = dhid[c] * (1.0 - ws.hid[c] * ws.hid[c]);
    G[lay.b1 + c] += du;
    const double* w = P + lay.w1 + c * F;
    double* dw = G + lay.w1 + c * F;
    for (std::size_t i = 0; i < F; ++i) {
      dw[i] += du * f[i];
      dx[i] += w[i] * du;
    }
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(ws.dh));
  const std::size_t grid = model.dims().grid;
  const std::size_t nb = ws.nb;
  std::vector<double> d_o(F), dq(F), dk(ws.N * d), dv(ws.N * d), da(ws.N);
  for (std::size_t l = ws.L; l-- > 0;) {
    const auto& blk = lay.layers[l];
    const double* K = &ws.k[l * ws.N * d];
    const double* V = &ws.v[l * ws.N * d];
    const double* Q = &ws.q[l * ws.T * d];
    const double* O = &ws.o[l * ws.T * d];
    const double* X = &ws.x[l * ws.T * d];

    // x_{l+1} = x_l + Wo o: the residual passes dx through unchanged.
    std::fill(d_o.begin(), d_o.end(), 0.0);
    for (std::size_t t = 0; t < ws.T; ++t) {
      matvec_backward(P + blk.wo, O + t * d, &dx[t * d], G + blk.wo, &d_o[t * d], d, d);
    }

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t h = 0; h < ws.H; ++h) {
      const std::size_t off = h * ws.dh;
      for (std::size_t t = 0; t < ws.T; ++t) {
        const double* row = &ws.att[((l * ws.H + h) * ws.T + t) * ws.N];
        const double* ext =
            datt.empty() ? nullptr : datt.data() + ((l * ws.H + h) * ws.T + t) * ws.I;
        double weighted = 0.0;
        for (std::size_t j = 0; j < ws.N; ++j) {
          double g = 0.0;
          for (std::size_t e = 0; e < ws.dh; ++e) {
            g += d_o[t * d + off + e] * V[j * d + off + e];
            dv[j * d + off + e] += row[j] * d_o[t * d + off + e];
          }
          if (ext != nullptr && j < ws.I) g += ext[j];
          da[j] = g;
          weighted += row[j] * g;
        }
        for (std::size_t j = 0; j < ws.N; ++j) {
          const double ds = row[j] * (da[j] - weighted) * inv_sqrt;
          for (std::size_t e = 0; e < ws.dh; ++e) {
            dq[t * d + off + e] += ds * K[j * d + off + e];
            dk[j * d + off + e] += ds * Q[t * d + off + e];
          }
        }
      }
    }

    // dx currently holds the residual path; add the query and key/value paths.
    for (std::size_t t = 0; t < ws.T; ++t) {
      matvec_backward(P + blk.wq, X + t * d, &dq[t * d], G + blk.wq, &dx[t * d], d, d);
    }
    for (std::size_t t = 0; t < ws.T; ++t) {
      matvec_backward(P + blk.wk, X + t * d, &dk[(ws.I + t) * d], G + blk.wk, &dx[t * d], d, d);
      matvec_backward(P + blk.wv, X + t * d, &dv[(ws.I + t) * d], G + blk.wv, &dx[t * d], d, d);
    }
    double* gk = &basis_grad[l * nb * d];
    double* gv = &basis_grad[(ws.L + l) * nb * d];
    for (std::size_t p = 0; p < ws.I; ++p) {
      const std::size_t br = 2 + p / grid, bc = 2 + grid + p % grid;
      for (std::size_t c = 0; c < d; ++c) {
        const double ek = dk[p * d + c], ev = dv[p * d + c];
        gk[c] += chart[p] * ek;
        gv[c] += chart[p] * ev;
        gk[d + c] += ek;
        gv[d + c] += ev;
        gk[br * d + c] += ek;
        gv[br * d + c] += ev;
        gk[bc * d + c] += ek;
        gv[bc * d + c] += ev;
      }
    }
  }

  for (std::size_t t = 0; t < ws.T; ++t) {
    const auto tok = static_cast<std::size_t>(question[t]);
    for (std::size_t c = 0; c < d; ++c) {
      G[lay.tok_emb + tok * d + c] += dx[t * d + c];
      G[lay.pos_txt + t * d + c] += dx[t * d + c];
    }
  }
}

void finish_basis_grad(const ToyModel& model, const Workspace& ws,
                       std::span<const double> basis_grad, std::span<double> grad) {
  const auto& lay = model.layout();
  const double* P = model.params().data();
  double* G = grad.data();
  const std::size_t d = ws.d, grid = model.dims().grid;
  for (std::size_t l = 0; l < ws.L; ++l) {
    const auto& blk = lay.layers[l];
    for (std::size_t b = 0; b < ws.nb; ++b) {
      const std::size_t at = patch_basis(lay, grid, d, b);
      matvec_backward(P + blk.wk, P + at, &basis_grad[(l * ws.nb + b) * d], G + blk.wk, G + at, d, d);
      matvec_backward(P + blk.wv, P + at, &basis_grad[((ws.L + l) * ws.nb + b) * d], G + blk.wv,
                      G + at, d, d);
    }
  }
}

std::vector<double> aggregate_image_attention(const Workspace& ws, std::size_t m_layers) {
  std::vector<double> agg(ws.I, 0.0);
  for (std::size_t l = 0; l < m_layers; ++l) {
    for (std::size_t h = 0; h < ws.H; ++h) {
      for (std::size_t t = 0; t < ws.T; ++t) {
        for (std::size_t p = 0; p < ws.I; ++p) agg[p] += ws.attention(l, h, t, p);
      }
    }
  }
  const auto count = static_cast<double>(m_layers * ws.H * ws.T);
  for (double& v : agg) v /= count;
  return agg;
}

// Supervised attention loss on the normalized map A and its gradient dL/dA.
// KLD compares distribution-normalized maps and chains through that step.
loss::LossResult supervised_loss(loss::LossKind kind, const Map2D& target, const Map2D& a) {
  const loss::LossConfig lcfg;
  if (kind != loss::LossKind::kKld) return loss::evaluate_unchecked(kind, target, a, lcfg);

  const ProbMap g = dist_normalize(target);
  double total = 0.0;
  Map2D pa(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[i] = a[i] + kDefaultEpsFloor;
    total += pa[i];
  }
  for (double& v : pa.values()) v /= total;
  loss::LossResult r = loss::evaluate_unchecked(kind, g.map(), pa, lcfg);
  double dot = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) dot += r.grad[i] * pa[i];
  for (std::size_t i = 0; i < pa.size(); ++i) r.grad[i] = (r.grad[i] - dot) / total;
  return r;
}

struct InstanceOutcome {
  double lm = 0.0;
  double attn = 0.0;
  bool correct = false;
  std::vector<double> agg;  // aggregated attention, one value per patch
};

InstanceOutcome run_instance(const ToyModel& model, const SynthInstance& inst,
                             const TrainConfig& cfg, Workspace& ws,
                             std::span<double> grad,  // parameters, then the basis gradient
                             const double* frozen_norm) {
  run_forward(model, inst.chart, inst.question, ws);
  InstanceOutcome out;
  const std::size_t label = inst.answer ? 1 : 0;
  out.lm = -std::log(ws.probs[label]);
  out.correct = (ws.probs[1] > ws.probs[0]) == inst.answer;
  out.agg = aggregate_image_attention(ws, cfg.m_layers);

  const double norm =
      frozen_norm != nullptr ? *frozen_norm : *std::max_element(out.agg.begin(), out.agg.end());
  const std::size_t grid = model.dims().grid;
  Map2D a(grid, grid);
  for (std::size_t p = 0; p < ws.I; ++p) a[p] = out.agg[p] / norm;
  loss::LossResult attn = supervised_loss(cfg.loss, inst.target_gaze, a);
  out.attn = attn.loss;

  if (grad.empty()) return out;

  std::array<double, 2> dlogits{cfg.lambda1 * ws.probs[0], cfg.lambda1 * ws.probs[1]};
  dlogits[label] -= cfg.lambda1;

  std::vector<double> datt;
  if (cfg.lambda2 != 0.0) {
    datt.assign(ws.L * ws.H * ws.T * ws.I, 0.0);
    const double per_row = 1.0 / (norm * static_cast<double>(cfg.m_layers * ws.H * ws.T));
    for (std::size_t l = 0; l < cfg.m_layers; ++l) {
      for (std::size_t h = 0; h < ws.H; ++h) {
        for (std::size_t t = 0; t < ws.T; ++t) {
          double* row = &datt[((l * ws.H + h) * ws.T + t) * ws.I];
          for (std::size_t p = 0; p < ws.I; ++p) row[p] = cfg.lambda2 * attn.grad[p] * per_row;
        }
      }
    }
  }
  const std::size_t np = model.params().size();
  run_backward(model, inst.chart, inst.question, ws, dlogits, datt, grad.first(np),
               grad.subspan(np));
  return out;
}

// Per-instance gradients land in separate buffers and are reduced in index
// order, so the sum does not depend on how instances were spread over workers.
std::vector<InstanceOutcome> batch_pass(const ToyModel& model, std::span<const SynthInstance> batch,
                                        const TrainConfig& cfg, std::vector<double>* grad,
                                        const std::vector<double>* frozen_norms,
                                        std::size_t workers) {
  const std::size_t n = batch.size();
  const std::size_t np = model.params().size();
  std::vector<InstanceOutcome> outcomes(n);
  const Workspace shape(model.dims());
  const std::size_t width = np + shape.basis_grad_size();
  std::vector<std::vector<double>> grads(grad != nullptr ? n : 0);

  auto work = [&](std::size_t begin, std::size_t end) {
    Workspace ws(model.dims());
    prepare_basis(model, ws);
    for (std::size_t i = begin; i < end; ++i) {
      std::span<double> g;
      if (grad != nullptr) {
        grads[i].assign(width, 0.0);
        g = grads[i];
      }
      outcomes[i] = run_instance(model, batch[i], cfg, ws, g,
                                 frozen_norms != nullptr ? &(*frozen_norms)[i] : nullptr);
    }
  };

  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& t : pool) t.join();
  }

  if (grad != nullptr) {
    std::vector<double> total(width, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < width; ++k) total[k] += grads[i][k];
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (double& v : total) v *= inv;
    grad->assign(total.begin(), total.begin() + static_cast<std::ptrdiff_t>(np));
    finish_basis_grad(model, shape, std::span<const double>(total).subspan(np), *grad);
  }
  return outcomes;
}

}  // namespace

ForwardResult forward(const ToyModel& model, const Map2D& chart, std::span<const int> question) {
  Workspace ws(model.dims());
  prepare_basis(model, ws);
  run_forward(model, chart, question, ws);
  ForwardResult out{ws.probs, AttnTensor(ws.L, ws.H, ws.T, ws.I)};
  for (std::size_t l = 0; l < ws.L; ++l) {
    for (std::size_t h = 0; h < ws.H; ++h) {
      for (std::size_t t = 0; t < ws.T; ++t) {
        for (std::size_t p = 0; p < ws.I; ++p) out.attention.at(l, h, t, p) = ws.attention(l, h, t, p);
      }
    }
  }
  return out;
}

LmLoss lm_loss(const Probs& probs, bool answer) {
  const std::size_t k = answer ? 1 : 0;
  if (!(probs[k] >= 0.0)) throw std::invalid_argument("lm_loss: invalid probability");
  LmLoss r{-std::log(probs[k]), {0.0, 0.0}};
  r.grad[k] = -1.0 / probs[k];
  return r;
}

LmLoss lm_loss_from_logits(std::span<const double> logits, bool answer) {
  if (logits.size() != 2) throw std::invalid_argument("lm_loss: expected two logits");
  const double m = std::max(logits[0], logits[1]);
  const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
  const std::size_t k = answer ? 1 : 0;
  LmLoss r{lse - logits[k], {std::exp(logits[0] - lse), std::exp(logits[1] - lse)}};
  r.grad[k] -= 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate(const ModelDims& dims) const {
  if (!std::isfinite(lambda1) || !std::isfinite(lambda2) || lambda1 < 0.0 || lambda2 < 0.0) {
    throw std::invalid_argument("lambda1 and lambda2 must be finite and >= 0");
  }
  if (m_layers < 1 || m_layers > dims.layers) {
    throw std::invalid_argument("m_layers must lie in [1, " + std::to_string(dims.layers) + "]");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&lineno](const std::string& msg) {
    throw DataError("config line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string{};
      return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty()) fail("expected 'key = value'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      std::size_t used = 0;
      auto real = [&] {
        const double v = std::stod(value, &used);
        if (used != value.size()) fail("bad number '" + value + "'");
        return v;
      };
      auto count = [&] {
        if (!value.empty() && value[0] == '-') fail("expected a non-negative integer");
        const auto v = std::stoull(value, &used);
        if (used != value.size()) fail("bad integer '" + value + "'");
        return v;
      };
      if (key == "lambda1") cfg.lambda1 = real();
      else if (key == "lambda2") cfg.lambda2 = real();
      else if (key == "loss") cfg.loss = loss::parse_loss_kind(value);
      else if (key == "m_layers") cfg.m_layers = count();
      else if (key == "learning_rate") cfg.learning_rate = real();
      else if (key == "epochs") cfg.epochs = count();
      else if (key == "batch_size") cfg.batch_size = count();
      else if (key == "seed") cfg.seed = count();
      else if (key == "sigma") cfg.sigma = real();
      else fail("unknown key '" + key + "'");
    } catch (const std::logic_error& e) {
      fail(std::string("bad value for '") + key + "': " + e.what());
    }
  }
  return cfg;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

Map2D attention_patch_map(const ForwardResult& fwd, std::size_t m_layers, std::size_t grid) {
  const AttnTensor& t = fwd.attention;
  if (m_layers < 1 || m_layers > t.layers()) throw std::invalid_argument("m_layers out of range");
  Map2D m(grid, grid, 0.0);
  if (m.size() != t.patches()) throw std::invalid_argument("grid does not match patch count");
  for (std::size_t l = 0; l < m_layers; ++l) {
    for (std::size_t h = 0; h < t.heads(); ++h) {
      for (std::size_t tok = 0; tok < t.tokens(); ++tok) {
        for (std::size_t p = 0; p < t.patches(); ++p) m[p] += t.at(l, h, tok, p);
      }
    }
  }
  const auto count = static_cast<double>(m_layers * t.heads() * t.tokens());
  for (double& v : m.values()) v /= count;
  return m;
}

std::vector<double> attention_normalizers(const ToyModel& model,
                                          std::span<const SynthInstance> batch,
                                          const TrainConfig& cfg) {
  cfg.validate(model.dims());
  const auto outcomes = batch_pass(model, batch, cfg, nullptr, nullptr, 1);
  std::vector<double> norms;
  norms.reserve(outcomes.size());
  for (const auto& o : outcomes) norms.push_back(*std::max_element(o.agg.begin(), o.agg.end()));
  return norms;
}

Objective objective(const ToyModel& model, std::span<const SynthInstance> batch,
                    const TrainConfig& cfg, std::vector<double>* grad,
                    const std::vector<double>* frozen_norms) {
  cfg.validate(model.dims());
  if (batch.empty()) throw std::invalid_argument("objective: empty batch");
  if (frozen_norms != nullptr && frozen_norms->size() != batch.size()) {
    throw std::invalid_argument("objective: one normalizer per instance required");
  }
  const auto outcomes = batch_pass(model, batch, cfg, grad, frozen_norms, 1);
  Objective obj;
  for (const auto& o : outcomes) {
    obj.lm += o.lm;
    obj.attn += o.attn;
  }
  const auto n = static_cast<double>(outcomes.size());
  obj.lm /= n;
  obj.attn /= n;
  obj.total = cfg.lambda1 * obj.lm + (cfg.lambda2 != 0.0 ? cfg.lambda2 * obj.attn : 0.0);
  return obj;
}

namespace {

// Running means of the metrics; instances with undefined CC are skipped.
struct MetricAccumulator {
  metrics::MetricReport sum;
  std::size_t count = 0;
  void add(const Map2D& target, const Map2D& attn) {
    try {
      const auto r = metrics::report(target, attn);
      sum.cc += r.cc;
      sum.kl += r.kl;
      sum.sim += r.sim;
      ++count;
    } catch (const std::domain_error&) {
    }
  }
  metrics::MetricReport mean() const {
    if (count == 0) return {};
    const auto n = static_cast<double>(count);
    return {sum.cc / n, sum.kl / n, sum.sim / n};
  }
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<SynthInstance>& data,
                  const ModelDims& dims, std::size_t workers) {
  cfg.validate(dims);
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  ToyModel model = ToyModel::initialize(dims, cfg.seed);
  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result{model, {}};
  std::vector<SynthInstance> batch;
  std::vector<double> grad;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    EpochStats stats;
    stats.epoch = epoch;
    MetricAccumulator acc;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      const auto outcomes = batch_pass(result.model, batch, cfg, &grad, nullptr, workers);
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const auto& o = outcomes[i];
        if (!std::isfinite(o.lm) || !std::isfinite(o.attn)) {
          throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                   " (non-finite loss)");
        }
        stats.lm_loss += o.lm;
        stats.attn_loss += o.attn;
        correct += o.correct ? 1 : 0;
        const std::size_t grid = dims.grid;
        acc.add(batch[i].target_gaze, Map2D(grid, grid, o.agg));
      }
      auto params = result.model.params();
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= cfg.learning_rate * grad[k];
    }
    const auto n = static_cast<double>(data.size());
    stats.accuracy = static_cast<double>(correct) / n;
    stats.lm_loss /= n;
    stats.attn_loss /= n;
    stats.metrics = acc.mean();
    result.history.push_back(stats);
  }
  return result;
}

EvalReport evaluate(const ToyModel& model, const std::vector<SynthInstance>& data,
                    std::size_t m_layers) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::size_t correct = 0;
  MetricAccumulator acc;
  for (const auto& inst : data) {
    const ForwardResult fwd = forward(model, inst.chart, inst.question);
    if ((fwd.probs[1] > fwd.probs[0]) == inst.answer) ++correct;
    acc.add(inst.target_gaze, attention_patch_map(fwd, m_layers, model.dims().grid));
  }
  return {static_cast<double>(correct) / static_cast<double>(data.size()), acc.mean(), acc.count};
}

std::vector<SynthInstance> mask_charts(const std::vector<SynthInstance>& data, double threshold,
                                       bool invert) {
  std::vector<SynthInstance> out = data;
  for (auto& inst : out) {
    inst.chart = perturb::apply_mask(inst.chart, perturb::gaze_mask(inst.target_gaze, threshold),
                                     invert);
  }
  return out;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "epoch,accuracy,lm_loss,attn_loss,cc,kl,sim\n";
  char buf[256];
  for (const auto& s : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.epoch, s.accuracy,
                  s.lm_loss, s.attn_loss, s.metrics.cc, s.metrics.kl, s.metrics.sim);
    out << buf;
  }
}

void write_dataset(const std::filesystem::path& dir, const std::vector<SynthInstance>& data) {
  std::filesystem::create_directories(dir);
  std::ofstream labels(dir / "labels.csv", std::ios::trunc);
  if (!labels) throw DataError("cannot open for writing: " + (dir / "labels.csv").string());
  labels << "index,type,ref_a,ref_b,answer\n";
  char name[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& inst = data[i];
    std::snprintf(name, sizeof name, "chart_%05zu.gam", i);
    io::write_gam(dir / name, inst.chart);
    std::snprintf(name, sizeof name, "gaze_%05zu.gam", i);
    io::write_gam(dir / name, inst.target_gaze);
    labels << i << ',' << type_name(inst.type) << ',' << inst.ref_a << ',' << inst.ref_b << ','
           << (inst.answer ? 1 : 0) << '\n';
  }
}

std::vector<SynthInstance> read_dataset(const std::filesystem::path& dir) {
  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw DataError("cannot open: " + (dir / "labels.csv").string());
  std::string line;
  std::getline(labels, line);
  if (line.rfind("index,type,ref_a,ref_b,answer", 0) != 0) {
    throw DataError("labels.csv: unexpected header");
  }
  std::vector<SynthInstance> out;
  char name[64];
  while (std::getline(labels, line)) {
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string idx, type, a, b, ans;
    if (!std::getline(ls, idx, ',') || !std::getline(ls, type, ',') || !std::getline(ls, a, ',') ||
        !std::getline(ls, b, ',') || !std::getline(ls, ans)) {
      throw DataError("labels.csv: malformed row '" + line + "'");
    }
    try {
      const std::size_t i = std::stoul(idx);
      SynthInstance inst{Map2D(1, 1), {}, parse_type(type), std::stoul(a), std::stoul(b),
                         std::stoi(ans) != 0, Map2D(1, 1)};
      std::snprintf(name, sizeof name, "chart_%05zu.gam", i);
      inst.chart = io::read_gam(dir / name);
      std::snprintf(name, sizeof name, "gaze_%05zu.gam", i);
      inst.target_gaze = io::read_gam(dir / name);
      if (inst.ref_a >= inst.chart.width() || inst.ref_b >= inst.chart.width()) {
        throw DataError("labels.csv: bar reference outside the chart");
      }
      inst.question = {static_cast<int>(inst.type), bar_token(inst.ref_a), bar_token(inst.ref_b)};
      out.push_back(std::move(inst));
    } catch (const std::logic_error&) {
      throw DataError("labels.csv: malformed row '" + line + "'");
    }
  }
  return out;
}

}  // namespace chartgaze::toy
