#include "chartgaze/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace chartgaze::io {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  return in;
}

void put_f32(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff),
                         static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::vector<double> get_f32(std::istream& in, std::size_t count, const std::string& what) {
  std::vector<unsigned char> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw DataError(what + ": truncated payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError(what + ": trailing bytes after payload");
  }
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                               (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
    if (!std::isfinite(out[i])) throw DataError(what + ": non-finite value");
  }
  return out;
}

// Parses "<magic> n1 n2 ...\n" with exactly `dims` positive integers.
std::vector<std::size_t> read_header(std::istream& in, const std::string& magic,
                                     std::size_t dims) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(magic + ": missing header");
  std::istringstream hs(line);
  std::string tag;
  hs >> tag;
  if (tag != magic) throw DataError("expected " + magic + " header, got '" + tag + "'");
  std::vector<std::size_t> out(dims);
  for (auto& d : out) {
    long long v = 0;
    if (!(hs >> v) || v <= 0) throw DataError(magic + ": bad dimension in header");
    d = static_cast<std::size_t>(v);
  }
  std::string extra;
  if (hs >> extra) throw DataError(magic + ": unexpected header token '" + extra + "'");
  return out;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

void write_gam(const std::filesystem::path& path, const Map2D& m) {
  auto out = open_out(path);
  out << "GAM1 " << m.height() << ' ' << m.width() << '\n';
  for (double v : m.values()) put_f32(out, v);
  if (!out) throw DataError("write failed: " + path.string());
}

Map2D read_gam(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto dims = read_header(in, "GAM1", 2);
  return Map2D(dims[0], dims[1], get_f32(in, dims[0] * dims[1], path.string()));
}

void write_atn(const std::filesystem::path& path, const AttnTensor& t) {
  auto out = open_out(path);
  out << "ATN1 " << t.layers() << ' ' << t.heads() << ' ' << t.tokens() << ' ' << t.patches()
      << '\n';
  for (double v : t.values()) put_f32(out, v);
  if (!out) throw DataError("write failed: " + path.string());
}

AttnTensor read_atn(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto d = read_header(in, "ATN1", 4);
  return AttnTensor(d[0], d[1], d[2], d[3],
                    get_f32(in, d[0] * d[1] * d[2] * d[3], path.string()));
}

Map2D read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  // Header tokens are whitespace separated and may carry '#' comments.
  auto token = [&in, &path]() {
    std::string tok;
    while (tok.empty()) {
      const int c = in.get();
      if (c == std::char_traits<char>::eof()) throw DataError(path.string() + ": bad PGM header");
      if (c == '#') {
        std::string ignored;
        std::getline(in, ignored);
      } else if (!std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        while (!std::isspace(in.peek()) && in.peek() != std::char_traits<char>::eof()) {
          tok.push_back(static_cast<char>(in.get()));
        }
      }
    }
    return tok;
  };
  if (token() != "P5") throw DataError(path.string() + ": only binary P5 PGM is supported");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": bad PGM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw DataError(path.string() + ": unsupported PGM dimensions or maxval");
  }
  in.get();  // single whitespace before raster
  std::vector<unsigned char> raw(w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw DataError(path.string() + ": truncated PGM raster");
  }
  Map2D m(h, w);
  const double scale = 255.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < raw.size(); ++i) m[i] = raw[i] * scale;
  return m;
}

void write_pgm_raw(const std::filesystem::path& path, const Map2D& m) {
  auto out = open_out(path);
  out << "P5\n" << m.width() << ' ' << m.height() << "\n255\n";
  std::vector<char> raw(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) raw[i] = static_cast<char>(to_byte(m[i]));
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Map2D& m) {
  Map2D scaled = minmax_normalize(m);
  for (double& v : scaled.values()) v *= 255.0;
  write_pgm_raw(path, scaled);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  *what = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open: " + path.string());
  std::string err;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialisation failed");
  }
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": " + (err.empty() ? "invalid PNG" : err));
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  // Normalize everything to 8-bit gray or RGB.
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  channels = png_get_channels(png, info);
  pixels.resize(static_cast<std::size_t>(w) * h * channels);
  rows.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = pixels.data() + static_cast<std::size_t>(r) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3) throw DataError(path.string() + ": unsupported channels");
  Image img;
  for (int c = 0; c < channels; ++c) img.planes.emplace_back(h, w);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    for (int c = 0; c < channels; ++c) img.planes[c][i] = pixels[i * channels + c];
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const std::size_t channels = img.planes.size();
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("write_png: image must have 1 or 3 planes");
  }
  const std::size_t w = img.width();
  const std::size_t h = img.height();
  std::vector<unsigned char> pixels(w * h * channels);
  for (std::size_t i = 0; i < w * h; ++i) {
    for (std::size_t c = 0; c < channels; ++c) pixels[i * channels + c] = to_byte(img.planes[c][i]);
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open for writing: " + path.string());
  std::string err;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(h);
  for (std::size_t r = 0; r < h; ++r) rows[r] = pixels.data() + r * w * channels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError(path.string() + ": " + (err.empty() ? "PNG write failed" : err));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

const std::array<Rgb, 256>& heatmap_colormap() {
  static const std::array<Rgb, 256> table = [] {
    std::array<Rgb, 256> t{};
    for (int i = 0; i < 256; ++i) {
      // Four equal segments over positions 0..1020.
      const int pos = i * 4;
      const int seg = std::min(pos / 255, 3);
      const auto f = static_cast<std::uint8_t>(pos - 255 * seg);
      const auto g = static_cast<std::uint8_t>(255 - f);
      switch (seg) {
        case 0: t[i] = {0, f, 255}; break;
        case 1: t[i] = {0, 255, g}; break;
        case 2: t[i] = {f, 255, 0}; break;
        default: t[i] = {255, g, 0}; break;
      }
    }
    return t;
  }();
  return table;
}

Image colorize(const Map2D& m) {
  const Map2D n = minmax_normalize(m);
  const auto& cmap = heatmap_colormap();
  Image img{{Map2D(m.height(), m.width()), Map2D(m.height(), m.width()),
             Map2D(m.height(), m.width())}};
  for (std::size_t i = 0; i < n.size(); ++i) {
    const Rgb& c = cmap[to_byte(n[i] * 255.0)];
    for (std::size_t p = 0; p < 3; ++p) img.planes[p][i] = c[p];
  }
  return img;
}

Image overlay_heatmap(const Map2D& m, const Image& base, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("overlay alpha must lie in [0, 1]");
  }
  const Image heat = colorize(bilinear_resize(m, base.height(), base.width()));
  Image out = heat;
  for (std::size_t p = 0; p < 3; ++p) {
    const Map2D& under = base.planes[base.planes.size() == 1 ? 0 : p];
    for (std::size_t i = 0; i < under.size(); ++i) {
      out.planes[p][i] = std::round(alpha * heat.planes[p][i] + (1.0 - alpha) * under[i]);
    }
  }
  return out;
}

}  // namespace chartgaze::io
