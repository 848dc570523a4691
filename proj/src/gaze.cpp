#include "chartgaze/gaze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "chartgaze/filter.hpp"

namespace chartgaze::gaze {

double Session::total_view_ms() const {
  return std::accumulate(fixations.begin(), fixations.end(), 0.0,
                         [](double acc, const Fixation& f) { return acc + f.duration_ms; });
}

std::vector<GazeSample> filter_samples(const std::vector<GazeSample>& samples,
                                       std::size_t height, std::size_t width) {
  std::vector<GazeSample> out;
  out.reserve(samples.size());
  const auto h = static_cast<double>(height);
  const auto w = static_cast<double>(width);
  for (const auto& s : samples) {
    if (!s.valid || !std::isfinite(s.x_px) || !std::isfinite(s.y_px)) continue;
    if (s.x_px < 0.0 || s.x_px >= w || s.y_px < 0.0 || s.y_px >= h) continue;
    out.push_back(s);
  }
  return out;
}

namespace {

struct Extent {
  double min_x = INFINITY, max_x = -INFINITY, min_y = INFINITY, max_y = -INFINITY;
  void add(const GazeSample& s) {
    min_x = std::min(min_x, s.x_px);
    max_x = std::max(max_x, s.x_px);
    min_y = std::min(min_y, s.y_px);
    max_y = std::max(max_y, s.y_px);
  }
  bool within(double dispersion) const {
    return max_x - min_x <= dispersion && max_y - min_y <= dispersion;
  }
};

}  // namespace

std::vector<Fixation> detect_fixations_idt(const std::vector<GazeSample>& samples,
                                           double dispersion_px, double min_dur_ms) {
  if (!(dispersion_px > 0.0)) throw std::invalid_argument("dispersion_px must be > 0");
  if (!(min_dur_ms > 0.0)) throw std::invalid_argument("min_dur_ms must be > 0");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].t_us <= samples[i - 1].t_us) {
      throw std::invalid_argument("gaze samples must be strictly increasing in time");
    }
  }

  const double min_dur_us = min_dur_ms * 1000.0;
  const std::size_t n = samples.size();
  std::vector<Fixation> out;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && static_cast<double>(samples[j].t_us - samples[i].t_us) < min_dur_us) ++j;
    if (j == n) break;

    Extent ext;
    for (std::size_t k = i; k <= j; ++k) ext.add(samples[k]);
    if (!ext.within(dispersion_px)) {
      ++i;
      continue;
    }
    while (j + 1 < n) {
      Extent grown = ext;
      grown.add(samples[j + 1]);
      if (!grown.within(dispersion_px)) break;
      ext = grown;
      ++j;
    }

    Fixation f;
    double sx = 0.0, sy = 0.0;
    for (std::size_t k = i; k <= j; ++k) {
      sx += samples[k].x_px;
      sy += samples[k].y_px;
    }
    const auto count = static_cast<double>(j - i + 1);
    f.x_px = sx / count;
    f.y_px = sy / count;
    f.start_us = samples[i].t_us;
    f.duration_ms = static_cast<double>(samples[j].t_us - samples[i].t_us) / 1000.0;
    out.push_back(f);
    i = j + 1;
  }
  return out;
}

Map2D accumulate_fixations(const std::vector<Fixation>& fixations, std::size_t h, std::size_t w) {
  Map2D m(h, w, 0.0);
  auto to_cell = [](double v, std::size_t n) {
    const double r = std::floor(v + 0.5);
    if (!(r >= 0.0)) return std::size_t{0};
    return std::min(static_cast<std::size_t>(r), n - 1);
  };
  for (const auto& f : fixations) {
    m(to_cell(f.y_px, h), to_cell(f.x_px, w)) += f.duration_ms;
  }
  return m;
}

Map2D log_transform(const Map2D& m) {
  Map2D out(m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] < 0.0) throw std::invalid_argument("log_transform: negative entry");
    out[i] = std::log1p(m[i]);
  }
  return out;
}

Map2D gaussian_blur(const Map2D& m, double sigma_px) {
  if (!(sigma_px > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be > 0");
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma_px));
  const auto kernel = gaussian_kernel(sigma_px, radius);
  return separable_convolve(m, kernel, Border::kReflect);
}

Map2D build_gaze_map(const std::vector<Fixation>& fixations, std::size_t h, std::size_t w,
                     double sigma_px) {
  return minmax_normalize(gaussian_blur(log_transform(accumulate_fixations(fixations, h, w)),
                                        sigma_px));
}

std::vector<Session> filter_sessions(const std::vector<Session>& sessions, double drop_pct) {
  if (!(drop_pct >= 0.0 && drop_pct < 100.0)) {
    throw std::invalid_argument("drop_pct must lie in [0, 100)");
  }
  const auto n = sessions.size();
  const auto drop = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * drop_pct / 100.0 + 1e-9));
  if (drop == 0) return sessions;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> totals(n);
  for (std::size_t i = 0; i < n; ++i) totals[i] = sessions[i].total_view_ms();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (totals[a] != totals[b]) return totals[a] < totals[b];
    return sessions[a].id < sessions[b].id;
  });
  std::vector<bool> dropped(n, false);
  for (std::size_t k = 0; k < drop; ++k) dropped[order[k]] = true;

  std::vector<Session> kept;
  kept.reserve(n - drop);
  for (std::size_t i = 0; i < n; ++i) {
    if (!dropped[i]) kept.push_back(sessions[i]);
  }
  return kept;
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Reads a CSV with the exact header `expected`; returns trimmed fields per row.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::string& expected) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != expected) {
    throw DataError(path.string() + ": expected header '" + expected + "'");
  }
  const auto columns = static_cast<std::size_t>(std::count(expected.begin(), expected.end(), ',')) + 1;
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(trim(field));
    if (fields.size() != columns) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(columns) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

double parse_real(const std::string& s, const std::filesystem::path& path) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": bad number '" + s + "'");
  }
  if (used != s.size()) throw DataError(path.string() + ": bad number '" + s + "'");
  return v;
}

std::int64_t parse_int(const std::string& s, const std::filesystem::path& path) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": bad integer '" + s + "'");
  }
  if (used != s.size()) throw DataError(path.string() + ": bad integer '" + s + "'");
  return v;
}

}  // namespace

std::vector<GazeSample> read_samples_csv(const std::filesystem::path& path) {
  std::vector<GazeSample> out;
  for (const auto& row : read_csv(path, "t_us,x_px,y_px,valid")) {
    GazeSample s;
    s.t_us = parse_int(row[0], path);
    s.valid = parse_int(row[3], path) != 0;
    // Invalid rows may carry empty or NaN coordinates.
    s.x_px = row[1].empty() ? NAN : parse_real(row[1], path);
    s.y_px = row[2].empty() ? NAN : parse_real(row[2], path);
    out.push_back(s);
  }
  return out;
}

std::vector<Fixation> read_fixations_csv(const std::filesystem::path& path) {
  std::vector<Fixation> out;
  for (const auto& row : read_csv(path, "x_px,y_px,start_us,duration_ms")) {
    Fixation f;
    f.x_px = parse_real(row[0], path);
    f.y_px = parse_real(row[1], path);
    f.start_us = parse_int(row[2], path);
    f.duration_ms = parse_real(row[3], path);
    if (!(f.duration_ms > 0.0) || !std::isfinite(f.x_px) || !std::isfinite(f.y_px)) {
      throw DataError(path.string() + ": fixations need finite coordinates and duration > 0");
    }
    out.push_back(f);
  }
  return out;
}

void write_fixations_csv(const std::filesystem::path& path, const std::vector<Fixation>& fx) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.precision(17);
  out << "x_px,y_px,start_us,duration_ms\n";
  for (const auto& f : fx) {
    out << f.x_px << ',' << f.y_px << ',' << f.start_us << ',' << f.duration_ms << '\n';
  }
}

}  // namespace chartgaze::gaze
