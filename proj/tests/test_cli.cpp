// End-to-end coverage of the command-line binary (driven as a subprocess via
// SPMM_CLI_PATH) plus the benchmark table APIs.  Every file the CLI produces
// is independently re-derived through the library and compared exactly.

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "spmm/bench.hpp"
#include "spmm/image_png.hpp"
#include "spmm/model.hpp"
#include "spmm/runconfig.hpp"
#include "spmm/weights_io.hpp"

using namespace spmm;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out, err;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args) {
  const std::string out_path = "/tmp/spmm_cli_stdout.txt";
  const std::string err_path = "/tmp/spmm_cli_stderr.txt";
  const std::string cmd =
      std::string(SPMM_CLI_PATH) + " " + args + " > " + out_path + " 2> " + err_path;
  const int rc = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

std::vector<std::string> fields_of(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  return out;
}

ImageU8 gradient_image(int64_t h, int64_t w, int phase = 0) {
  ImageU8 img(h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<uint8_t>(
            128.0 + 100.0 * std::sin(0.3 * double(y) + 0.5 * double(x) + c + phase));
  return img;
}

}  // namespace

TEST_CASE("cli: argument errors and help") {
  CHECK(run_cli("").exit_code == 2);
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("metrics --a only.png").exit_code == 2);  // missing --b
  const auto help = run_cli("--help");
  CHECK(help.exit_code == 0);
  CHECK(help.out.find("sr") != std::string::npos);
  CHECK(help.out.find("gradcheck") != std::string::npos);
}

TEST_CASE("cli: params reports counts, budget band, and compute") {
  const auto t = run_cli("params --preset t --scale 4");
  REQUIRE(t.exit_code == 0);
  CHECK(t.out.find(" parameters") != std::string::npos);
  CHECK(t.out.find("inside") != std::string::npos);
  CHECK(t.out.find("GMacs") != std::string::npos);
  const long count = std::strtol(t.out.c_str(), nullptr, 10);
  CHECK(count >= 200000);
  CHECK(count <= 350000);
  CHECK(count == param_count(model_init<real>(ModelConfig::preset("t", 4), 0)));

  const auto b = run_cli("params --preset b --scale 4");
  REQUIRE(b.exit_code == 0);
  const long bcount = std::strtol(b.out.c_str(), nullptr, 10);
  CHECK(bcount >= 420000);
  CHECK(bcount <= 700000);

  CHECK(run_cli("params --preset t --scale 5").exit_code == 2);  // out of menu
}

TEST_CASE("cli: metrics matches the library on the same images") {
  const ImageU8 a = gradient_image(24, 20);
  ImageU8 b = a;
  for (auto& v : b.data) v = static_cast<uint8_t>(std::min(255, int(v) + 6));
  png_write("/tmp/spmm_cli_a.png", a);
  png_write("/tmp/spmm_cli_b.png", b);

  const auto same = run_cli("metrics --a /tmp/spmm_cli_a.png --b /tmp/spmm_cli_a.png");
  REQUIRE(same.exit_code == 0);
  CHECK(same.out == "PSNR: inf dB\nSSIM: 1.0000\n");

  const auto diff = run_cli("metrics --a /tmp/spmm_cli_a.png --b /tmp/spmm_cli_b.png");
  REQUIRE(diff.exit_code == 0);
  const auto ya = rgb_to_y(image_to_tensor<real>(a));
  const auto yb = rgb_to_y(image_to_tensor<real>(b));
  char expect[64];
  std::snprintf(expect, sizeof expect, "PSNR: %.2f dB\n", psnr(ya, yb, 255.0, 0));
  CHECK(diff.out.find(expect) == 0);
  std::snprintf(expect, sizeof expect, "SSIM: %.4f\n", ssim(ya, yb, 255.0));
  CHECK(diff.out.find(expect) != std::string::npos);

  // Border cropping switch runs and reports a (different) finite value.
  const auto cropped = run_cli("metrics --a /tmp/spmm_cli_a.png --b /tmp/spmm_cli_b.png --scale 4");
  REQUIRE(cropped.exit_code == 0);

  // Size mismatch is a runtime error (exit 1).
  png_write("/tmp/spmm_cli_small.png", gradient_image(12, 12));
  const auto bad = run_cli("metrics --a /tmp/spmm_cli_a.png --b /tmp/spmm_cli_small.png");
  CHECK(bad.exit_code == 1);
  CHECK(bad.err.find("error:") != std::string::npos);
}

TEST_CASE("cli: sr upscales exactly like the library") {
  const ModelConfig cfg = ModelConfig::preset("t-mini", 2);
  const auto model = model_init<real>(cfg, 19);
  save_weights(model.weights, "/tmp/spmm_cli_w.spmm", model_config_to_json(cfg));

  const ImageU8 lr = gradient_image(12, 9);  // odd size exercises padding
  png_write("/tmp/spmm_cli_lr.png", lr);

  const auto r = run_cli(
      "sr --in /tmp/spmm_cli_lr.png --weights /tmp/spmm_cli_w.spmm --scale 2 "
      "--out /tmp/spmm_cli_sr.png");
  REQUIRE(r.exit_code == 0);
  const ImageU8 sr = png_read("/tmp/spmm_cli_sr.png");
  REQUIRE(sr.h == 24);
  REQUIRE(sr.w == 18);
  const auto want = tensor_to_image(
      model_apply(image_to_tensor<real>(lr), model, RunMode::infer()));
  CHECK(sr == want);

  // Self-ensemble variant averages the eight dihedral passes.
  const auto se = run_cli(
      "sr --in /tmp/spmm_cli_lr.png --weights /tmp/spmm_cli_w.spmm --scale 2 "
      "--self-ensemble --out /tmp/spmm_cli_sr8.png");
  REQUIRE(se.exit_code == 0);
  const auto want8 = tensor_to_image(self_ensemble(image_to_tensor<real>(lr), model));
  CHECK(png_read("/tmp/spmm_cli_sr8.png") == want8);

  // Declared scale must match the weights' metadata.
  const auto mismatch = run_cli(
      "sr --in /tmp/spmm_cli_lr.png --weights /tmp/spmm_cli_w.spmm --scale 4 "
      "--out /tmp/spmm_cli_sr4.png");
  CHECK(mismatch.exit_code == 1);
  CHECK(mismatch.err.find("error:") != std::string::npos);
}

TEST_CASE("cli: superpixels paints token mean colors") {
  png_write("/tmp/spmm_cli_sp.png", gradient_image(16, 16, 2));
  const auto r = run_cli(
      "superpixels --in /tmp/spmm_cli_sp.png --m 16 --t 3 --out /tmp/spmm_cli_seg.png");
  REQUIRE(r.exit_code == 0);
  const ImageU8 seg = png_read("/tmp/spmm_cli_seg.png");
  REQUIRE(seg.h == 16);
  REQUIRE(seg.w == 16);
  std::set<std::vector<uint8_t>> colors;
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x)
      colors.insert({seg.at(y, x, 0), seg.at(y, x, 1), seg.at(y, x, 2)});
  CHECK(colors.size() <= 16);
  CHECK(colors.size() >= 2);

  CHECK(run_cli("superpixels --in /tmp/spmm_cli_sp.png --m 15 --t 3 "
                "--out /tmp/spmm_cli_seg.png")
            .exit_code == 1);  // 15 is not a square
}

TEST_CASE("cli: train-toy traces, saves, and reports losses") {
  png_write("/tmp/spmm_cli_hr.png", gradient_image(20, 20, 4));
  const auto r = run_cli(
      "train-toy --hr /tmp/spmm_cli_hr.png --scale 2 --steps 3 --seed 1 "
      "--trace /tmp/spmm_cli_trace.csv --save-weights /tmp/spmm_cli_toy.spmm");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("initial loss:") != std::string::npos);
  CHECK(r.out.find("final loss:") != std::string::npos);

  const auto rows = lines_of(slurp("/tmp/spmm_cli_trace.csv"));
  REQUIRE(rows.size() == 4);  // header + 3 steps
  CHECK(rows[0] == "step,loss,expert0,expert1,expert2");
  const auto first = fields_of(rows[1]);
  REQUIRE(first.size() == 5);
  CHECK(first[0] == "0");
  CHECK(std::stod(first[1]) > 0.0);

  const auto saved = load_weights<real>("/tmp/spmm_cli_toy.spmm");
  const RunConfig meta = runconfig_from_json("{\"model\": " + saved.meta_json + "}");
  CHECK(meta.model.upscale == 2);
  CHECK(meta.model.channels == 16);
  CHECK(saved.tree.count("stem.w") == 1);
}

TEST_CASE("cli: gradcheck filters and reports") {
  const auto r = run_cli("gradcheck --module prim.add");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.out.find("gradient checks passed") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);

  CHECK(run_cli("gradcheck --module no.such.case").exit_code == 1);
}

TEST_CASE("cli: benchmark tables carry exact work counters") {
  const auto r = run_cli(
      "bench-scan --lengths 64,128 --d-state 4 --channels 2 --trials 3 "
      "--out /tmp/spmm_cli_bs.csv");
  REQUIRE(r.exit_code == 0);
  const auto rows = lines_of(slurp("/tmp/spmm_cli_bs.csv"));
  REQUIRE(rows.size() >= 5);  // header + 2 lengths x 2 kinds
  CHECK(rows[0] == "label,length,time_ns_median,flops,ratio");
  bool saw_recurrent64 = false;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto f = fields_of(rows[i]);
    REQUIRE(f.size() == 5);
    const long length = std::strtol(f[1].c_str(), nullptr, 10);
    const long flops = std::strtol(f[3].c_str(), nullptr, 10);
    CHECK(flops > 0);
    if (f[0] == "recurrent") {
      CHECK(flops == 2L * length * 2 * 4);
      saw_recurrent64 = saw_recurrent64 || length == 64;
    }
  }
  CHECK(saw_recurrent64);

  const auto sp = run_cli(
      "bench-spssm --h 16 --w 16 --scale 1 --m 16 --trials 3 --out /tmp/spmm_cli_bsp.csv");
  REQUIRE(sp.exit_code == 0);
  const auto sprows = lines_of(slurp("/tmp/spmm_cli_bsp.csv"));
  REQUIRE(sprows.size() == 3);
  bool saw_ratio = false;
  for (size_t i = 1; i < sprows.size(); ++i) {
    const auto f = fields_of(sprows[i]);
    REQUIRE(f.size() == 5);
    if (f[0] == "superpixel") {
      CHECK(std::stod(f[4]) == doctest::Approx(16.0).epsilon(1e-12));  // 256/16
      saw_ratio = true;
    }
  }
  CHECK(saw_ratio);
}

TEST_CASE("bench api: counters, labels, and the log-log fit") {
  const auto report = bench_scan({32, 64, 128}, 4, 2, 3, 1);
  REQUIRE(report.rows.size() == 6);  // recurrent + parallel per length
  for (const auto& row : report.rows) {
    CHECK(row.time_ns_median > 0);
    CHECK(row.flops == 2 * row.length * 2 * 4);
    CHECK((row.label == "recurrent" || row.label == "parallel"));
  }
  const std::string csv = report.csv();
  CHECK(csv.find("label,length,time_ns_median,flops,ratio") == 0);
  CHECK(lines_of(csv).size() == 7);

  // A synthetic exact power law fits with slope 2 and perfect correlation.
  BenchReport fake;
  for (int64_t L : {10, 100, 1000})
    fake.rows.push_back(BenchRow{"recurrent", L, L * L, 0, 0.0});
  const auto fit = loglog_fit(fake, "recurrent");
  CHECK(fit.slope == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-9));

  // Threaded rows label the thread count.
  const auto threaded = bench_scan({32}, 4, 2, 3, 2);
  bool saw = false;
  for (const auto& row : threaded.rows) saw = saw || row.label == "parallel_t2";
  CHECK(saw);
}
