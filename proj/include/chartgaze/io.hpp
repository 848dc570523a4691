#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "chartgaze/grid.hpp"

namespace chartgaze::io {

// GAM1: "GAM1 <height> <width>\n" then height*width float32 little-endian.
// ATN1: "ATN1 <layers> <heads> <tokens> <patches>\n" then float32 little-endian.
// Values are stored as float32, so doubles are rounded on write; a file read
// and written again is byte-identical.

void write_gam(const std::filesystem::path& path, const Map2D& m);
Map2D read_gam(const std::filesystem::path& path);

void write_atn(const std::filesystem::path& path, const AttnTensor& t);
AttnTensor read_atn(const std::filesystem::path& path);

/// Binary PGM (P5). Samples are returned on the 0..255 scale.
Map2D read_pgm(const std::filesystem::path& path);
/// Stretches the map min-max onto 0..255 before writing.
void write_pgm(const std::filesystem::path& path, const Map2D& m);
/// Writes values rounded and clamped to 0..255, no stretching (image planes).
void write_pgm_raw(const std::filesystem::path& path, const Map2D& m);

/// Planar 8-bit image: 1 plane (gray) or 3 planes (RGB), samples 0..255.
struct Image {
  std::vector<Map2D> planes;
  std::size_t height() const { return planes.front().height(); }
  std::size_t width() const { return planes.front().width(); }
};

Image read_png(const std::filesystem::path& path);
/// 8-bit gray or RGB PNG; no time chunk or other metadata is emitted.
void write_png(const std::filesystem::path& path, const Image& img);

/// Blue -> cyan -> green -> yellow -> red, 256 entries; index 0 is low.
using Rgb = std::array<std::uint8_t, 3>;
const std::array<Rgb, 256>& heatmap_colormap();

/// Min-max stretches `m` and looks every cell up in heatmap_colormap().
Image colorize(const Map2D& m);

/// Heatmap of `m` alpha-blended over `base` (resized to the base dims):
/// out = alpha * heat + (1 - alpha) * base. Gray bases are broadcast to RGB.
Image overlay_heatmap(const Map2D& m, const Image& base, double alpha);

}  // namespace chartgaze::io
