#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acceptance_checks.hpp"
#include "json.hpp"
#include "ldsr/bench.hpp"
#include "ldsr/checkpoint.hpp"
#include "ldsr/config.hpp"
#include "ldsr/image_io.hpp"
#include "ldsr/metrics.hpp"
#include "ldsr/pipeline.hpp"

using namespace ldsr;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void emit(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << std::endl;
    return;
  }
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  f << j.dump(2) << '\n';
}

RunConfig base_config(const std::string& preset) {
  if (preset == "toy") return RunConfig::toy();
  if (preset == "paper") return RunConfig{};
  throw UsageError("unknown preset '" + preset + "' (toy or paper)");
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(item, &pos);
      if (pos != item.size() || v == 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("bad size list '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("empty size list");
  return out;
}

std::pair<std::size_t, std::size_t> parse_hw(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw UsageError("bad --hw '" + s + "', expected HxW");
  }
}

double time_restore_ms(const BackboneState<float>& s, const Tensor<float>& x, const TrainContext<float>& ctx,
                       std::int64_t tau) {
  const auto t0 = std::chrono::steady_clock::now();
  restore(s, x, ctx, tau);
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_train(const std::string& config, const std::string& preset, const std::string& out,
              const std::string& metrics_path, long steps, long seed) {
  RunConfig cfg = config.empty() ? base_config(preset) : load_run_config(config, base_config(preset));
  if (steps > 0) cfg.train.steps = static_cast<std::size_t>(steps);
  if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
  cfg.validate();
  const ToyData data = make_toy_data(cfg);
  const TrainContext<float> ctx = make_context(cfg);
  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path);
    if (!metrics) throw std::runtime_error("cannot write " + metrics_path);
  }
  const auto probe = data.val_lq.front();
  const auto macs = mac_count(cfg.backbone, probe.dim(2), probe.dim(3)).total;
  BackboneState<float> shape_model = BackboneState<float>::init(cfg.backbone);
  const std::size_t params = shape_model.params.total_params();
  lora_inject(shape_model, cfg.lora);
  // Latency depends only on the architecture, so it is measured once.
  const double latency = time_restore_ms(shape_model, probe, ctx, cfg.train.sched.tau_g);
  TrainResult res = train_run(cfg, data, [&](const EvalRecord& e) {
    const json rec = {{"step", e.step},
                      {"train_loss", e.train_loss},
                      {"psnr_y", e.val.psnr_y},
                      {"ssim_y", e.val.ssim_y},
                      {"raw_psnr_y", e.raw.psnr_y},
                      {"baseline_psnr_y", e.val.baseline_psnr_y},
                      {"params", params},
                      {"macs", macs},
                      {"latency_ms", latency}};
    std::cout << rec.dump() << std::endl;
    if (metrics) metrics << rec.dump() << '\n';
  });
  save_checkpoint(out, res.best);
  const BackboneState<float> deployed = deployed_state(res.best);
  json summary = {{"checkpoint", out},
                  {"best_step", res.best_step},
                  {"deployed", res.best_is_ema ? "ema" : "adapters"},
                  {"val", metrics_json(res.best_val)},
                  {"test", metrics_json(res.test)},
                  {"params", params},
                  {"macs", macs},
                  {"latency_ms", time_restore_ms(deployed, probe, ctx, cfg.train.sched.tau_g)}};
  std::cout << summary.dump() << std::endl;
  if (metrics) metrics << summary.dump() << '\n';
  return 0;
}

int cmd_restore(const std::string& ckpt_path, const std::string& in, const std::string& out,
                const std::string& tmpl) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  TrainContext<float> ctx = make_context(ckpt.config);
  if (!tmpl.empty()) ctx.prompt_template = tmpl;
  const Tensor<float> x = read_image(in);
  const std::size_t factor = ckpt.config.degradation.downscale;
  const std::size_t H = x.dim(2) * factor, W = x.dim(3) * factor;
  const AlignedImage<float> aligned = align_to_32(upscale_nearest(x, factor));
  const BackboneState<float> state = deployed_state(ckpt);
  const auto calls = forward_calls();
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor<float> y = restore(state, aligned.image, ctx, ckpt.config.train.sched.tau_g);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  const auto used = forward_calls() - calls;
  if (used != 1) throw std::logic_error("restore: expected exactly one backbone evaluation");
  write_image(out, crop(y, H, W));
  emit({{"in", in},
        {"out", out},
        {"input_hw", {x.dim(2), x.dim(3)}},
        {"output_hw", {H, W}},
        {"aligned_hw", {aligned.image.dim(2), aligned.image.dim(3)}},
        {"forward_calls", used},
        {"latency_ms", ms},
        {"macs", mac_count(state.cfg, aligned.image.dim(2), aligned.image.dim(3)).total}},
       "");
  return 0;
}

int cmd_prune(const std::string& ckpt_path, double ratio, long calib_steps, const std::string& out,
              const std::string& report_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (!ckpt.kept.empty()) throw std::runtime_error("prune: checkpoint is already pruned");
  RunConfig cfg = ckpt.config;
  if (calib_steps > 0) cfg.prune.calib_steps = static_cast<std::size_t>(calib_steps);
  cfg.prune.keep_ratio = ratio;
  cfg.validate();
  const ToyData data = make_toy_data(cfg);
  const std::size_t budget = budget_for_ratio(cfg.backbone, ratio);
  PruneOutcome po = run_prune_calibration(deployed_state(ckpt), make_calib_set(cfg, data), cfg, budget);
  const TrainContext<float> ctx = make_context(cfg);
  const auto tau = cfg.train.sched.tau_g;
  const EvalMetrics dense = evaluate(po.merged, data.test_hq, data.test_lq, ctx, tau);
  const EvalMetrics pruned = evaluate(po.pruned, data.test_hq, data.test_lq, ctx, tau);
  const ValidationReport gate = validate_pruned({{"psnr_y", dense.psnr_y}, {"ssim_y", dense.ssim_y}},
                                                {{"psnr_y", pruned.psnr_y}, {"ssim_y", pruned.ssim_y}});
  if (!out.empty()) {
    Checkpoint pc;
    pc.config = cfg;
    pc.state = po.pruned;
    pc.kept = po.report.kept;
    pc.original_blocks = cfg.backbone.blocks;
    pc.prune = po.report;
    pc.extra["test"] = metrics_json(pruned);
    save_checkpoint(out, pc);
  }
  emit({{"report", po.report.json()},
        {"dense", metrics_json(dense)},
        {"pruned", metrics_json(pruned)},
        {"validation", {{"pass", gate.pass}, {"relative_drop", gate.relative_drop}, {"failures", gate.failures}}},
        {"checkpoint", out}},
       report_path);
  return 0;
}

int cmd_compare(const std::string& ckpt_path, double ratio, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const ToyData data = make_toy_data(ckpt.config);
  const std::size_t budget = budget_for_ratio(ckpt.config.backbone, ratio);
  const StrategyTable t = compare_prune_strategies(
      ckpt, data, budget,
      {PruneStrategy::saliency, PruneStrategy::tail, PruneStrategy::random, PruneStrategy::magnitude});
  emit(t.json(), out);
  return 0;
}

int cmd_bench(const std::string& sizes, const std::string& config, long reps, long warmup, bool no_quad,
              const std::string& out) {
  const RunConfig cfg = config.empty() ? RunConfig::toy() : load_run_config(config, RunConfig::toy());
  const BenchResult r = scaling_benchmark(cfg.backbone, parse_sizes(sizes), static_cast<std::size_t>(warmup),
                                          static_cast<std::size_t>(reps), !no_quad);
  emit(r.json(), out);
  return 0;
}

int cmd_macs(const std::string& config, const std::string& hw, const std::string& out) {
  const RunConfig cfg = config.empty() ? RunConfig::toy() : load_run_config(config, RunConfig::toy());
  const auto [h, w] = parse_hw(hw);
  emit(mac_count(cfg.backbone, h, w).json(), out);
  return 0;
}

int cmd_selftest() {
  int failures = 0;
  for (const auto& r : acceptance::fast_checks()) {
    std::cout << acceptance::format_line(r) << std::endl;
    if (!r.pass) ++failures;
  }
  return failures ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-step latent super-resolution toolkit"};
  app.require_subcommand(1);

  std::string config, preset = "toy", out, train_out = "ldsr.ckpt", metrics, ckpt, in, tmpl, sizes, hw, report;
  long steps = 0, seed = -1, calib_steps = 0, reps = 20, warmup = 5;
  double ratio = 0.75;
  bool no_quad = false;

  auto* train = app.add_subcommand("train", "Train LoRA adapters on the procedural toy set");
  train->add_option("--config", config, "Run config JSON (fields optional)")->check(CLI::ExistingFile);
  train->add_option("--preset", preset, "Defaults the config is applied over: toy or paper")->capture_default_str();
  train->add_option("--out", train_out, "Checkpoint path")->capture_default_str();
  train->add_option("--metrics", metrics, "Also write evaluation records (JSON lines) here");
  train->add_option("--steps", steps, "Override train.steps");
  train->add_option("--seed", seed, "Override train.seed");

  auto* rest = app.add_subcommand("restore", "4x restore of one image (PPM or raw float)");
  rest->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  rest->add_option("--in", in, "Input image")->required()->check(CLI::ExistingFile);
  rest->add_option("--out", out, "Output image")->required();
  rest->add_option("--prompt-template", tmpl, "Quality suffix appended to the tags");

  auto* prune = app.add_subcommand("prune", "Calibrate, score and drop blocks");
  prune->add_option("--ckpt", ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  prune->add_option("--budget-ratio", ratio, "Fraction of blocks kept")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  prune->add_option("--calib-steps", calib_steps, "Calibration steps K (default from config)");
  prune->add_option("--out", out, "Pruned checkpoint path");
  prune->add_option("--report", report, "Write the JSON report here instead of stdout");

  auto* compare = app.add_subcommand("compare", "Compare pruning strategies at one budget");
  compare->add_option("--ckpt", ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  compare->add_option("--budget-ratio", ratio, "Fraction of blocks kept")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  compare->add_option("--out", out, "Write the JSON table here instead of stdout");

  auto* bench = app.add_subcommand("bench", "Linear vs quadratic attention scaling");
  bench->add_option("--sizes", sizes, "Token counts, e.g. 256,512,1024")->required();
  bench->add_option("--config", config, "Run config JSON")->check(CLI::ExistingFile);
  bench->add_option("--reps", reps, "Timed repetitions")->capture_default_str();
  bench->add_option("--warmup", warmup, "Warmup runs")->capture_default_str();
  bench->add_flag("--no-quadratic", no_quad, "Skip the quadratic reference");
  bench->add_option("--out", out, "Write JSON here instead of stdout");

  auto* macs = app.add_subcommand("macs", "Analytic MAC count of one restore");
  macs->add_option("--config", config, "Run config JSON")->check(CLI::ExistingFile);
  macs->add_option("--hw", hw, "Image size HxW (multiples of 32)")->required();
  macs->add_option("--out", out, "Write JSON here instead of stdout");

  auto* self = app.add_subcommand("selftest", "Run the oracle suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config, preset, train_out, metrics, steps, seed);
    if (*rest) return cmd_restore(ckpt, in, out, tmpl);
    if (*prune) return cmd_prune(ckpt, ratio, calib_steps, out, report);
    if (*compare) return cmd_compare(ckpt, ratio, out);
    if (*bench) {
      if (reps <= 0 || warmup < 0) throw UsageError("--reps must be positive and --warmup nonnegative");
      return cmd_bench(sizes, config, reps, warmup, no_quad, out);
    }
    if (*macs) return cmd_macs(config, hw, out);
    if (*self) return cmd_selftest();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}
