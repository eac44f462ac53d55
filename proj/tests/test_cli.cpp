#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ldsr/bench.hpp"
#include "ldsr/image_io.hpp"
#include "support.hpp"

using namespace ldsr;
using nlohmann::json;

namespace {

const std::string kCli = LDSR_CLI_PATH;

int run(const std::string& args, const std::string& stdout_path = "/dev/null") {
  const int rc = std::system((kCli + " " + args + " > " + stdout_path + " 2>/dev/null").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return json::parse(ss.str());
}

class Cli : public ::testing::Test {
 protected:
  static std::string dir() { return ::testing::TempDir() + "ldsr_cli_"; }

  // One small checkpoint shared by the suite.
  static void SetUpTestSuite() {
    auto cfg = ldsr::testing::small_run_config();
    cfg.train.steps = 2;
    std::ofstream(dir() + "cfg.json") << to_json(cfg).dump();
    ASSERT_EQ(run("train --config " + dir() + "cfg.json --out " + dir() + "model.ckpt"), 0);
  }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("macs --hw 64x64 --bogus"), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("macs --hw 64by64"), 1);
}

TEST_F(Cli, RuntimeErrorsExitTwo) {
  EXPECT_EQ(run("macs --hw 65x64"), 2);
  std::ofstream(dir() + "junk.ckpt") << "junk";
  EXPECT_EQ(run("restore --ckpt " + dir() + "junk.ckpt --in " + dir() + "cfg.json --out " + dir() + "o.ppm"), 2);
}

TEST_F(Cli, MacsJson) {
  const std::string out = dir() + "macs.json";
  ASSERT_EQ(run("macs --config " + dir() + "cfg.json --hw 512x512", out), 0);
  const auto j = read_json(out);
  const auto cfg = ldsr::testing::small_run_config();
  EXPECT_EQ(j.at("tokens"), 256);
  EXPECT_EQ(j.at("total").get<std::uint64_t>(), mac_count(cfg.backbone, 512, 512).total);
  EXPECT_EQ(j.at("codec").get<std::uint64_t>(), 2ull * 256 * 3072 * 3072);
}

TEST_F(Cli, RestoreUpscalesFourTimes) {
  Tensor<float> x({1, 3, 500, 500});
  Rng rng(1);
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  write_ppm(dir() + "in.ppm", x);
  const std::string out = dir() + "restore.json";
  ASSERT_EQ(run("restore --ckpt " + dir() + "model.ckpt --in " + dir() + "in.ppm --out " + dir() + "out.ppm", out), 0);
  const auto y = read_ppm(dir() + "out.ppm");
  EXPECT_EQ(y.shape(), (Shape{1, 3, 2000, 2000}));
  const auto j = read_json(out);
  EXPECT_EQ(j.at("forward_calls"), 1);
  EXPECT_EQ(j.at("aligned_hw"), json::array({2016, 2016}));
}

TEST_F(Cli, PruneAtFullRatioKeepsAllBlocks) {
  const std::string report = dir() + "prune.json";
  ASSERT_EQ(run("prune --ckpt " + dir() + "model.ckpt --budget-ratio 1.0 --calib-steps 2 --out " + dir() +
                "pruned.ckpt --report " + report),
            0);
  const auto j = read_json(report);
  EXPECT_EQ(j.at("report").at("kept"), json::array({0, 1, 2}));
  EXPECT_EQ(j.at("report").at("total_params_after"), j.at("report").at("total_params_before"));
  EXPECT_EQ(run("prune --ckpt " + dir() + "pruned.ckpt"), 2);  // already pruned
  EXPECT_EQ(run("prune --ckpt " + dir() + "model.ckpt --budget-ratio 1.5"), 1);
}
