#include "doctest.h"

#include <sstream>

#include "chartgaze/attention.hpp"
#include "chartgaze/io.hpp"
#include "cli.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace chartgaze;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string s(const std::filesystem::path& p) { return p.string(); }

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  const auto unknown = run({"metrics", "--g", "a", "--a", "b", "--bogus"});
  CHECK(unknown.code == cli::kExitUsage);
  CHECK(unknown.err.find("error:") == 0);
  CHECK(std::count(unknown.err.begin(), unknown.err.end(), '\n') == 1);
  CHECK(run({"gazemap", "--fixations", "missing.csv", "--size", "4x4", "--out", "g.gam"}).code ==
        cli::kExitUsage);
}

TEST_CASE("help lists defaults") {
  const auto h = run({"gazemap", "--help"});
  CHECK(h.code == 0);
  CHECK(h.out.find("--sigma") != std::string::npos);
  CHECK(h.out.find("40") != std::string::npos);
  const auto p = run({"perturb", "--help"});
  CHECK(p.out.find("15") != std::string::npos);
  CHECK(p.out.find("0.5") != std::string::npos);
  CHECK(run({"render", "--help"}).out.find("0.6") != std::string::npos);
  CHECK(run({"filter-sessions", "--help"}).out.find("3") != std::string::npos);
}

TEST_CASE("gazemap, render and metrics") {
  testing::TempDir dir("cli");
  testing::spit(dir / "f.csv", "x_px,y_px,start_us,duration_ms\n40,30,0,250\n");
  const auto g = run({"gazemap", "--fixations", s(dir / "f.csv"), "--size", "60x80", "--sigma", "6",
                      "--out", s(dir / "g.gam")});
  REQUIRE(g.code == 0);
  const Map2D map = io::read_gam(dir / "g.gam");
  CHECK(map.height() == 60);
  CHECK(map(30, 40) == 1.0f);

  CHECK(run({"render", "--in", s(dir / "g.gam"), "--out", s(dir / "g.png")}).code == 0);
  const io::Image img = io::read_png(dir / "g.png");
  CHECK(img.planes[0](30, 40) == 255.0);  // hottest cell is red

  const auto m = run({"metrics", "--g", s(dir / "g.gam"), "--a", s(dir / "g.gam"), "--json"});
  REQUIRE(m.code == 0);
  const auto j = nlohmann::json::parse(m.out);
  CHECK(j.size() == 3);
  CHECK(m.out.rfind("{\"cc\":", 0) == 0);
  CHECK(j.at("cc").get<double>() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(j.at("kl").get<double>() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(j.at("sim").get<double>() == doctest::Approx(1.0).epsilon(1e-9));
  const auto plain = run({"metrics", "--g", s(dir / "g.gam"), "--a", s(dir / "g.gam")});
  CHECK(plain.out.rfind("cc=1 kl=", 0) == 0);

  SUBCASE("constant map is a data error") {
    io::write_gam(dir / "flat.gam", Map2D(60, 80, 0.5));
    CHECK(run({"metrics", "--g", s(dir / "g.gam"), "--a", s(dir / "flat.gam")}).code == cli::kExitData);
  }
}

TEST_CASE("gazemap from raw samples") {
  testing::TempDir dir("cli");
  std::string csv = "t_us,x_px,y_px,valid\n";
  for (int i = 0; i < 30; ++i) csv += std::to_string(i * 10000) + ",20,10,1\n";
  testing::spit(dir / "s.csv", csv);
  const auto r = run({"gazemap", "--samples", s(dir / "s.csv"), "--size", "32x32", "--sigma", "2",
                      "--fixations-out", s(dir / "fx.csv"), "--out", s(dir / "g.pgm")});
  REQUIRE(r.code == 0);
  CHECK(r.out == "fixations=1\n");
  CHECK(io::read_pgm(dir / "g.pgm")(10, 20) == 255.0);
  CHECK(testing::slurp(dir / "fx.csv").find("20,10,0,290") != std::string::npos);
}

TEST_CASE("attnmap aggregates and warns on malformed rows") {
  testing::TempDir dir("cli");
  AttnTensor t(2, 1, 1, 4, 0.1);
  t.at(0, 0, 0, 3) = 0.7;
  io::write_atn(dir / "t.atn", t);
  auto r = run({"attnmap", "--attn", s(dir / "t.atn"), "--layers", "1", "--grid", "2x2", "--out-size",
                "4x4", "--out", s(dir / "a.gam")});
  REQUIRE(r.code == 0);
  CHECK(r.err.empty());
  const Map2D a = io::read_gam(dir / "a.gam");
  CHECK(a(3, 3) == 1.0f);
  CHECK(a(0, 0) == 0.0f);

  t.at(1, 0, 0, 0) = 0.95;
  io::write_atn(dir / "bad.atn", t);
  r = run({"attnmap", "--attn", s(dir / "bad.atn"), "--layers", "2", "--grid", "2x2", "--out-size",
           "4x4", "--out", s(dir / "b.gam")});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);

  CHECK(run({"attnmap", "--attn", s(dir / "t.atn"), "--layers", "3", "--grid", "2x2", "--out-size",
             "4x4", "--out", s(dir / "c.gam")}).code == cli::kExitData);
  CHECK(run({"attnmap", "--attn", s(dir / "t.atn"), "--layers", "1", "--grid", "3x3", "--out-size",
             "4x4", "--out", s(dir / "c.gam")}).code == cli::kExitData);
  CHECK(run({"attnmap", "--attn", s(dir / "t.atn"), "--layers", "1", "--grid", "2by2", "--out-size",
             "4x4", "--out", s(dir / "c.gam")}).code == cli::kExitUsage);

  r = run({"attnmap", "--attn", s(dir / "t.atn"), "--layers", "2", "--grid", "2x2", "--out-size", "4x4",
           "--split", "layer", "--out", s(dir / "split.gam")});
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(dir / "split_layer0.gam"));
  CHECK(std::filesystem::exists(dir / "split_layer1.gam"));
}

TEST_CASE("loss and grad-check") {
  testing::TempDir dir("cli");
  io::write_gam(dir / "g.gam", Map2D(1, 4, std::vector<double>{1, 0, 0, 0}));
  io::write_gam(dir / "a.gam", Map2D(1, 4, 0.0));
  const auto r = run({"loss", "--kind", "wmse", "--g", s(dir / "g.gam"), "--a", s(dir / "a.gam"),
                      "--grad-out", s(dir / "grad.gam")});
  REQUIRE(r.code == 0);
  CHECK(r.out == "loss=2.5\n");
  CHECK(io::read_gam(dir / "grad.gam")[0] == -5.0f);
  CHECK(run({"loss", "--kind", "wmse", "--alpha", "2.1", "--g", s(dir / "g.gam"), "--a",
             s(dir / "a.gam")}).out == "loss=0.227272727\n");
  CHECK(run({"loss", "--kind", "wmse", "--alpha", "1", "--g", s(dir / "g.gam"), "--a",
             s(dir / "a.gam")}).code == cli::kExitUsage);
  CHECK(run({"loss", "--kind", "huber", "--g", s(dir / "g.gam"), "--a", s(dir / "a.gam")}).code ==
        cli::kExitUsage);
  io::write_gam(dir / "wide.gam", Map2D(1, 4, 3.0));
  CHECK(run({"loss", "--kind", "wmse", "--g", s(dir / "wide.gam"), "--a", s(dir / "a.gam")}).code ==
        cli::kExitData);

  for (const char* kind : {"wmse", "kld", "focal", "dicebce", "lm"}) {
    const auto gc = run({"grad-check", "--kind", kind, "--seed", "3"});
    REQUIRE(gc.code == 0);
    CHECK(std::stod(gc.out.substr(gc.out.find('=') + 1)) < 1e-3);
  }
}

TEST_CASE("perturb masks and blurs images") {
  testing::TempDir dir("cli");
  io::write_pgm_raw(dir / "img.pgm", Map2D(8, 8, 200.0));
  Map2D g(4, 4, 0.0);
  g(0, 0) = 1.0;
  io::write_gam(dir / "g.gam", g);
  const auto r = run({"perturb", "--img", s(dir / "img.pgm"), "--gaze", s(dir / "g.gam"), "--mode",
                      "mask", "--out", s(dir / "out.pgm")});
  REQUIRE(r.code == 0);
  const Map2D out = io::read_pgm(dir / "out.pgm");
  CHECK(out(0, 0) == 0.0);
  CHECK(out(7, 7) == 200.0);
  const auto inv = run({"perturb", "--img", s(dir / "img.pgm"), "--gaze", s(dir / "g.gam"), "--invert",
                        "--out", s(dir / "inv.pgm")});
  REQUIRE(inv.code == 0);
  CHECK(io::read_pgm(dir / "inv.pgm")(0, 0) == 200.0);
  CHECK(io::read_pgm(dir / "inv.pgm")(7, 7) == 0.0);

  io::write_png(dir / "rgb.png", io::Image{{Map2D(8, 8, 10.0), Map2D(8, 8, 20.0), Map2D(8, 8, 30.0)}});
  CHECK(run({"perturb", "--img", s(dir / "rgb.png"), "--gaze", s(dir / "g.gam"), "--mode", "blur",
             "--kernel", "3", "--sigma", "1", "--out", s(dir / "rgb_out.png")}).code == 0);
  const io::Image blurred = io::read_png(dir / "rgb_out.png");
  CHECK(blurred.planes[2](0, 0) == 30.0);  // blurring a flat image changes nothing
  CHECK(run({"perturb", "--img", s(dir / "img.pgm"), "--gaze", s(dir / "g.gam"), "--kernel", "4",
             "--out", s(dir / "x.pgm")}).code == cli::kExitUsage);
  CHECK(run({"perturb", "--img", s(dir / "img.pgm"), "--gaze", s(dir / "g.gam"), "--threshold", "1",
             "--out", s(dir / "x.pgm")}).code == cli::kExitUsage);
}

TEST_CASE("filter-sessions writes the kept ids") {
  testing::TempDir dir("cli");
  std::filesystem::create_directories(dir / "sessions");
  for (int i = 0; i < 40; ++i) {
    testing::spit(dir / "sessions" / ("p" + std::to_string(10 + i) + ".csv"),
                  "x_px,y_px,start_us,duration_ms\n1,1,0," + std::to_string(i == 5 ? 1 : 500 + i) + "\n");
  }
  const auto r = run({"filter-sessions", "--fixation-dir", s(dir / "sessions"), "--out", s(dir / "kept.txt")});
  REQUIRE(r.code == 0);
  CHECK(r.out == "kept=39 dropped=1\n");
  const std::string kept = testing::slurp(dir / "kept.txt");
  CHECK(kept.find("p15\n") == std::string::npos);
  CHECK(kept.rfind("p10\np11\n", 0) == 0);
}

TEST_CASE("synth and train-toy") {
  testing::TempDir dir("cli");
  REQUIRE(run({"synth", "--n", "12", "--grid", "8", "--seed", "4", "--out", s(dir / "ds")}).code == 0);
  CHECK(std::filesystem::exists(dir / "ds" / "labels.csv"));
  CHECK(std::filesystem::exists(dir / "ds" / "gaze_00011.gam"));
  testing::spit(dir / "cfg.txt", "epochs = 2\nbatch_size = 4\nloss = focal\n");
  const auto r = run({"train-toy", "--config", s(dir / "cfg.txt"), "--data", s(dir / "ds"), "--out",
                      s(dir / "m.bin"), "--history", s(dir / "h.csv")});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("epochs=2 ", 0) == 0);
  const std::string hist = testing::slurp(dir / "h.csv");
  CHECK(std::count(hist.begin(), hist.end(), '\n') == 3);
  testing::spit(dir / "bad.txt", "epochs = 2\nwarmup = 3\n");
  CHECK(run({"train-toy", "--config", s(dir / "bad.txt"), "--data", s(dir / "ds"), "--out",
             s(dir / "m2.bin")}).code == cli::kExitData);
}
