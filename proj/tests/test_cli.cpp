#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kpx/cli.hpp"
#include "kpx/data.hpp"
#include "kpx/render.hpp"

#include <json.hpp>

using namespace kpx;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() / ("kpx_cli_test_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli::run({"no-such-command"}) == 2);
  CHECK(cli::run({"generate"}) == 2);          // missing --out
  CHECK(cli::run({"train", "--data", "x"}) == 2);  // missing required flags
}

TEST_CASE("eval on a missing checkpoint exits 1 and names the path") {
  const fs::path dir = tmpdir();
  const std::string missing = (dir / "nope.ckpt").string();
  CHECK(cli::run({"eval", "--checkpoint", missing, "--set",
                  "x=" + (dir / "nope.kpx").string(), "--out-csv",
                  (dir / "o.csv").string()}) == 1);
}

TEST_CASE("generate is reproducible byte for byte") {
  const fs::path dir = tmpdir();
  const std::string out1 = (dir / "a.kpx").string();
  const std::string out2 = (dir / "b.kpx").string();
  std::vector<std::string> args{"generate", "--n-digits", "2",   "--max-overlap",
                                "0",        "--n",        "40",  "--seed",
                                "5",        "--glyphs-per-class", "10"};
  std::vector<std::string> a1 = args;
  a1.push_back("--out");
  a1.push_back(out1);
  std::vector<std::string> a2 = args;
  a2.push_back("--out");
  a2.push_back(out2);
  REQUIRE(cli::run(a1) == 0);
  REQUIRE(cli::run(a2) == 0);
  CHECK(slurp(out1) == slurp(out2));
  // manifest written with the artifacts listed
  nlohmann::json m = nlohmann::json::parse(slurp(out1 + ".manifest.json"));
  CHECK(m.at("command") == "generate");
  CHECK(m.at("artifacts").size() == 1);
}

TEST_CASE("pipeline: generate, train, eval, render" * doctest::timeout(900)) {
  const fs::path dir = tmpdir();
  const std::string train_kpx = (dir / "train.kpx").string();
  const std::string val_kpx = (dir / "val.kpx").string();
  const std::string ckpt = (dir / "model.ckpt").string();
  const std::string metrics = (dir / "metrics.csv").string();
  const std::string evalcsv = (dir / "eval.csv").string();

  REQUIRE(cli::run({"generate", "--n-digits", "2", "--n", "96", "--seed", "11",
                    "--glyphs-per-class", "20", "--split", "train", "--out",
                    train_kpx}) == 0);
  REQUIRE(cli::run({"generate", "--n-digits", "2", "--n", "32", "--seed", "12",
                    "--glyphs-per-class", "20", "--split", "val", "--out",
                    val_kpx}) == 0);
  REQUIRE(cli::run({"train", "--preset", "komplexnet", "--timesteps", "3",
                    "--epochs", "2", "--batch", "32", "--seed", "7", "--data",
                    train_kpx, "--val", val_kpx, "--out", ckpt, "--metrics",
                    metrics}) == 0);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(metrics));

  REQUIRE(cli::run({"eval", "--checkpoint", ckpt, "--set",
                    "in_distribution=" + val_kpx, "--set", "noise=" + val_kpx,
                    "--out-csv", evalcsv}) == 0);
  // rows for both protocols, one per timestep
  std::ifstream in(evalcsv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "protocol,timestep,accuracy,cs_loss,epoch");
  int n_in = 0, n_noise = 0;
  while (std::getline(in, line)) {
    if (line.rfind("in_distribution,", 0) == 0) ++n_in;
    if (line.rfind("noise,", 0) == 0) ++n_noise;
  }
  CHECK(n_in == 3);
  CHECK(n_noise == 3);

  const std::string rdir = (dir / "render").string();
  REQUIRE(cli::run({"render", "--checkpoint", ckpt, "--data", val_kpx,
                    "--sample-index", "0", "--out-dir", rdir}) == 0);
  // 8 channels + composite + polar, all parseable PPM with the right dims
  for (int c = 0; c < 8; ++c) {
    render::Image img =
        render::read_ppm(rdir + "/phase_channel_" + std::to_string(c) + ".ppm");
    CHECK(img.width == 32);
    CHECK(img.height == 32);
  }
  CHECK(render::read_ppm(rdir + "/phase_composite.ppm").width == 32);
  CHECK(render::read_ppm(rdir + "/polar.ppm").width == 256);
  CHECK(fs::exists(rdir + "/manifest.json"));

  SUBCASE("re-running eval reproduces the CSV bytes") {
    const std::string evalcsv2 = (dir / "eval2.csv").string();
    REQUIRE(cli::run({"eval", "--checkpoint", ckpt, "--set",
                      "in_distribution=" + val_kpx, "--set",
                      "noise=" + val_kpx, "--out-csv", evalcsv2}) == 0);
    CHECK(slurp(evalcsv) == slurp(evalcsv2));
  }
}
