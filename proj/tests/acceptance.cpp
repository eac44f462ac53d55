// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. `--fast` runs criteria 1-8 only.
#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include "acceptance_checks.hpp"
#include "ldsr/bench.hpp"
#include "ldsr/checkpoint.hpp"
#include "ldsr/pipeline.hpp"

using namespace ldsr;
using namespace ldsr::acceptance;

namespace {

constexpr std::uint64_t kSeeds[3] = {0, 1, 2};

RunConfig run_for_seed(std::uint64_t seed) {
  RunConfig cfg = RunConfig::toy();
  cfg.train.steps = 2000;
  cfg.train.batch = 4;
  cfg.train.crop = 128;
  cfg.train.seed = seed;
  cfg.lora.seed = 0x10BA + seed;
  cfg.prune.seed = 0xCA11B + seed;
  return cfg;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void emit(const CheckResult& r, int& failures) {
  std::cout << format_line(r) << std::endl;
  if (!r.pass) ++failures;
}

}  // namespace

int main(int argc, char** argv) {
  const bool fast_only = argc > 1 && std::strcmp(argv[1], "--fast") == 0;
  int failures = 0;
  for (const auto& r : fast_checks()) emit(r, failures);
  if (fast_only) return failures ? 1 : 0;

  const auto tmp = std::filesystem::temp_directory_path() / "ldsr_acceptance";
  std::filesystem::create_directories(tmp);

  std::vector<TrainResult> runs;
  ToyData data;
  const CheckResult c9 = run_check(9, "toy training beats the degraded baseline", [&](std::string& d) {
    data = make_toy_data(run_for_seed(0));
    std::vector<double> gains;
    for (auto seed : kSeeds) {
      runs.push_back(train_run(run_for_seed(seed), data, [&](const EvalRecord& e) {
        std::cerr << "seed " << seed << " step " << e.step << " loss " << e.train_loss << " val ema "
                  << e.val.psnr_y - e.val.baseline_psnr_y << " raw " << e.raw.psnr_y - e.raw.baseline_psnr_y
                  << " dB\n";
      }));
      const auto& t = runs.back().test;
      gains.push_back(t.psnr_y - t.baseline_psnr_y);
      std::cerr << "seed " << seed << " test gain " << gains.back() << " dB\n";
    }
    const double med = median3(gains);
    d = "median gain " + fmt("%.3f", med) + " dB (" + fmt("%.3f", gains[0]) + ", " + fmt("%.3f", gains[1]) +
        ", " + fmt("%.3f", gains[2]) + "), baseline " + fmt("%.2f", runs[0].test.baseline_psnr_y) + " dB";
    return med >= 1.0;
  });
  emit(c9, failures);

  const CheckResult c10 = run_check(10, "saliency >= tail >= random pruning at keep 0.75", [&](std::string& d) {
    if (runs.size() != 3) throw std::runtime_error("criterion 9 runs unavailable");
    std::vector<double> full, sal, tail, rnd;
    for (const auto& r : runs) {
      const std::size_t budget = budget_for_ratio(r.best.config.backbone, 0.75);
      const StrategyTable tab = compare_prune_strategies(
          r.best, data, budget, {PruneStrategy::saliency, PruneStrategy::tail, PruneStrategy::random});
      std::cerr << tab.json().dump() << "\n";
      full.push_back(tab.row("full").psnr_y);
      sal.push_back(tab.row("saliency").psnr_y);
      tail.push_back(tab.row("tail").psnr_y);
      rnd.push_back(tab.row("random").psnr_y);
    }
    const double mf = median3(full), ms = median3(sal), mt = median3(tail), mr = median3(rnd);
    const ValidationReport gate = validate_pruned({{"psnr_y", mf}}, {{"psnr_y", ms}}, 0.03);
    d = "median PSNR-Y full " + fmt("%.3f", mf) + ", saliency " + fmt("%.3f", ms) + ", tail " + fmt("%.3f", mt) +
        ", random " + fmt("%.3f", mr) + ", gate " + (gate.pass ? "pass" : "fail");
    return ms >= mt && mt >= mr && gate.pass;
  });
  emit(c10, failures);

  const CheckResult c11 = run_check(11, "identical seeds give bitwise-identical checkpoints", [&](std::string& d) {
    if (runs.empty()) throw std::runtime_error("criterion 9 runs unavailable");
    const auto a = (tmp / "run_a.ckpt").string(), b = (tmp / "run_b.ckpt").string();
    save_checkpoint(a, runs[0].best);
    const TrainResult again = train_run(run_for_seed(kSeeds[0]), make_toy_data(run_for_seed(kSeeds[0])));
    save_checkpoint(b, again.best);
    const std::string ba = read_bytes(a), bb = read_bytes(b);
    d = std::to_string(ba.size()) + " bytes, " + (ba == bb ? "identical" : "different");
    return !ba.empty() && ba == bb;
  });
  emit(c11, failures);

  std::cout << (failures ? "ACCEPTANCE FAILED: " + std::to_string(failures) + " of 11 criteria"
                         : std::string("ACCEPTANCE PASSED: 11 of 11 criteria"))
            << std::endl;
  return failures ? 1 : 0;
}
