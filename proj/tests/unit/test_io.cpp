#include "doctest.h"

#include <cstring>

#include "chartgaze/io.hpp"
#include "support.hpp"

using namespace chartgaze;
using testing::slurp;
using testing::spit;

TEST_CASE("GAM1 layout and round trip") {
  testing::TempDir dir("io");
  const Map2D m(2, 3, std::vector<double>{0.0, 0.25, -1.5, 3.0, 1e-3, 7.0});
  io::write_gam(dir / "m.gam", m);
  const std::string bytes = slurp(dir / "m.gam");
  const std::string header = "GAM1 2 3\n";
  REQUIRE(bytes.size() == header.size() + 6 * 4);
  CHECK(bytes.substr(0, header.size()) == header);
  float second;
  std::memcpy(&second, bytes.data() + header.size() + 4, 4);
  CHECK(second == 0.25f);

  const Map2D back = io::read_gam(dir / "m.gam");
  CHECK(back.height() == 2);
  CHECK(back.width() == 3);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(m[i])));
  io::write_gam(dir / "again.gam", back);
  CHECK(slurp(dir / "again.gam") == bytes);
}

TEST_CASE("GAM1 reader rejects malformed files") {
  testing::TempDir dir("io");
  const std::string payload(8, '\0');
  spit(dir / "trunc.gam", "GAM1 2 2\n" + payload);
  CHECK_THROWS_AS(io::read_gam(dir / "trunc.gam"), DataError);
  spit(dir / "extra.gam", "GAM1 1 1\n" + std::string(5, '\0'));
  CHECK_THROWS_AS(io::read_gam(dir / "extra.gam"), DataError);
  spit(dir / "magic.gam", "GAMX 1 1\n" + std::string(4, '\0'));
  CHECK_THROWS_AS(io::read_gam(dir / "magic.gam"), DataError);
  spit(dir / "zero.gam", "GAM1 0 1\n");
  CHECK_THROWS_AS(io::read_gam(dir / "zero.gam"), DataError);
  const float nan = NAN;
  std::string bad = "GAM1 1 1\n";
  bad.append(reinterpret_cast<const char*>(&nan), 4);
  spit(dir / "nan.gam", bad);
  CHECK_THROWS_AS(io::read_gam(dir / "nan.gam"), DataError);
  CHECK_THROWS_AS(io::read_gam(dir / "missing.gam"), DataError);
}

TEST_CASE("ATN1 round trip") {
  testing::TempDir dir("io");
  AttnTensor t(2, 1, 3, 4);
  for (std::size_t i = 0; i < t.values().size(); ++i) t.values()[i] = 0.01 * static_cast<double>(i);
  io::write_atn(dir / "t.atn", t);
  CHECK(slurp(dir / "t.atn").substr(0, 13) == "ATN1 2 1 3 4\n");
  const AttnTensor back = io::read_atn(dir / "t.atn");
  CHECK(back.layers() == 2);
  CHECK(back.tokens() == 3);
  CHECK(back.at(1, 0, 2, 3) == doctest::Approx(0.23).epsilon(1e-6));
}

TEST_CASE("PGM export stretches and round trips raw planes") {
  testing::TempDir dir("io");
  const Map2D m(1, 3, std::vector<double>{-1.0, 0.0, 1.0});
  io::write_pgm(dir / "m.pgm", m);
  const Map2D g = io::read_pgm(dir / "m.pgm");
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 128.0);
  CHECK(g[2] == 255.0);
  const Map2D raw(1, 3, std::vector<double>{12.4, 300.0, -3.0});
  io::write_pgm_raw(dir / "r.pgm", raw);
  const Map2D r = io::read_pgm(dir / "r.pgm");
  CHECK(r[0] == 12.0);
  CHECK(r[1] == 255.0);
  CHECK(r[2] == 0.0);
  spit(dir / "p2.pgm", "P2\n1 1\n255\n0\n");
  CHECK_THROWS_AS(io::read_pgm(dir / "p2.pgm"), DataError);
}

TEST_CASE("PNG round trip and determinism") {
  testing::TempDir dir("io");
  io::Image img{{Map2D(3, 4, 10.0), Map2D(3, 4, 128.0), Map2D(3, 4, 250.0)}};
  img.planes[0](2, 3) = 0.0;
  io::write_png(dir / "a.png", img);
  io::write_png(dir / "b.png", img);
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
  const io::Image back = io::read_png(dir / "a.png");
  REQUIRE(back.planes.size() == 3);
  CHECK(back.planes[0] == img.planes[0]);
  CHECK(back.planes[2] == img.planes[2]);
  spit(dir / "junk.png", "not a png");
  CHECK_THROWS_AS(io::read_png(dir / "junk.png"), DataError);
}

TEST_CASE("heatmap colormap runs blue to red") {
  const auto& cm = io::heatmap_colormap();
  CHECK(cm[0] == io::Rgb{0, 0, 255});
  CHECK(cm[255] == io::Rgb{255, 0, 0});
  CHECK(cm[64][1] > 200);   // around cyan
  CHECK(cm[128][1] == 255); // green band
  for (const auto& c : cm) CHECK(c[0] * c[2] == 0);  // never red and blue together

  const io::Image heat = io::colorize(Map2D(1, 2, std::vector<double>{0.0, 5.0}));
  CHECK(heat.planes[2][0] == 255.0);
  CHECK(heat.planes[0][1] == 255.0);
}

TEST_CASE("overlay blends heat over the base") {
  const Map2D m(2, 2, std::vector<double>{0, 0, 0, 1});
  const io::Image base{{Map2D(4, 4, 100.0)}};
  const io::Image out = io::overlay_heatmap(m, base, 0.5);
  REQUIRE(out.planes.size() == 3);
  CHECK(out.height() == 4);
  // Top-left is the coldest cell: blue at full, red at zero.
  CHECK(out.planes[2](0, 0) == std::round(0.5 * 255 + 50));
  CHECK(out.planes[0](0, 0) == 50.0);
  CHECK(out.planes[0](3, 3) == std::round(0.5 * 255 + 50));
  const io::Image same = io::overlay_heatmap(m, base, 0.0);
  CHECK(same.planes[1] == base.planes[0]);
  CHECK_THROWS_AS(io::overlay_heatmap(m, base, 1.5), std::invalid_argument);
}
