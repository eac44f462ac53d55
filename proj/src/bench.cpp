#include "ldsr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "ldsr/metrics.hpp"

namespace ldsr {

using nlohmann::json;

namespace {

using u64 = std::uint64_t;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
double median_ms(F&& fn, std::size_t warmup, std::size_t reps) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> t;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return median(std::move(t));
}

CondBatch<float> bench_condition(const BackboneConfig& cfg) {
  Rng rng(0xBE1C);
  PromptCondition<float> c{gaussian_fill<float>(rng, {cfg.text_tokens, cfg.text_width}),
                           std::vector<std::uint8_t>(cfg.text_tokens, 1)};
  return {c};
}

}  // namespace

MacReport backbone_macs(const BackboneConfig& cfg, std::size_t grid_h, std::size_t grid_w,
                        std::size_t text_tokens) {
  MacReport r;
  const u64 N = grid_h * grid_w, d = cfg.width, C = cfg.latent_channels, L = cfg.blocks;
  const u64 dh = cfg.head_dim(), dff = cfg.ffn_width, nt = text_tokens, dt = cfg.text_width;
  r.patch = 2 * N * C * d;
  if (L > 0) r.timestep = 2 * d * d + L * 6 * d * d;
  const u64 kernel = cfg.attention == AttentionKind::linear ? 2 * N * d * dh + N * d : 2 * N * N * d;
  r.self_attn = L * (4 * N * d * d + kernel);
  r.cross_attn = L * (2 * N * d * d + 2 * nt * dt * d + 2 * N * nt * d);
  r.ffn = L * 2 * N * d * dff;
  r.total = r.patch + r.timestep + r.self_attn + r.cross_attn + r.ffn;
  r.tokens = N;
  r.config = cfg;
  return r;
}

MacReport mac_count(const BackboneConfig& cfg, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || height % kPatch || width % kPatch) {
    throw std::invalid_argument("mac_count: H and W must be positive multiples of 32");
  }
  MacReport r = backbone_macs(cfg, height / kPatch, width / kPatch, cfg.text_tokens);
  r.codec = 2 * static_cast<u64>(r.tokens) * kPatchDim * kPatchDim;
  r.total += r.codec;
  r.height = height;
  r.width = width;
  return r;
}

json MacReport::json() const {
  return {{"codec", codec},         {"patch", patch},   {"timestep", timestep},
          {"self_attn", self_attn}, {"cross_attn", cross_attn}, {"ffn", ffn},
          {"total", total},         {"tokens", tokens}, {"height", height},
          {"width", width},         {"blocks", config.blocks}, {"model_width", config.width},
          {"heads", config.heads},  {"ffn_width", config.ffn_width}, {"text_tokens", config.text_tokens},
          {"attention", config.attention == AttentionKind::linear ? "linear" : "quadratic"}};
}

std::pair<std::size_t, std::size_t> grid_for_tokens(std::size_t n) {
  if (n == 0) throw std::invalid_argument("grid_for_tokens: n must be positive");
  std::size_t h = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (n % h) --h;
  return {h, n / h};
}

BenchResult scaling_benchmark(const BackboneConfig& cfg, const std::vector<std::size_t>& sizes,
                              std::size_t warmup, std::size_t reps, bool quadratic) {
  if (sizes.empty() || !std::is_sorted(sizes.begin(), sizes.end())) {
    throw std::invalid_argument("scaling_benchmark: sizes must be non-empty and ascending");
  }
  if (reps == 0) throw std::invalid_argument("scaling_benchmark: reps must be positive");
  BenchResult res;
  res.sizes = sizes;
  res.warmup = warmup;
  res.reps = reps;
  BackboneConfig lin = cfg, quad = cfg;
  lin.attention = AttentionKind::linear;
  quad.attention = AttentionKind::quadratic;
  const auto s_lin = BackboneState<float>::init(lin);
  const auto s_quad = BackboneState<float>::init(quad);
  const auto cond = bench_condition(cfg);
  constexpr double kMinMs = 0.05;
  for (std::size_t n : sizes) {
    const auto [h, w] = grid_for_tokens(n);
    Rng rng(0x5CA1E + n);
    const Tensor<float> z = gaussian_fill<float>(rng, {1, cfg.latent_channels, h, w});
    const double tl = median_ms([&] { forward(s_lin, z, 500.0, cond, false, false); }, warmup, reps);
    if (tl < kMinMs) throw std::runtime_error("scaling_benchmark: forward too fast to time; use larger N");
    res.times_linear.push_back(tl);
    res.macs_linear.push_back(backbone_macs(lin, h, w, cfg.text_tokens).total);
    if (quadratic) {
      res.times_quadratic.push_back(median_ms([&] { forward(s_quad, z, 500.0, cond, false, false); }, warmup, reps));
    }
  }
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    res.ratios_linear.push_back(res.times_linear[i] / res.times_linear[i - 1]);
    if (quadratic) res.ratios_quadratic.push_back(res.times_quadratic[i] / res.times_quadratic[i - 1]);
  }
  return res;
}

json BenchResult::json() const {
  return {{"sizes", sizes},
          {"times_linear_ms", times_linear},
          {"times_quadratic_ms", times_quadratic},
          {"ratios_linear", ratios_linear},
          {"ratios_quadratic", ratios_quadratic},
          {"macs_linear", macs_linear},
          {"warmup", warmup},
          {"reps", reps},
          {"dtype", "float32"},
          {"threads", 1}};
}

StrategyTable compare_prune_strategies(const Checkpoint& ckpt, const ToyData& data, std::size_t budget,
                                       const std::vector<PruneStrategy>& strategies,
                                       std::size_t warmup, std::size_t reps) {
  if (data.test_hq.empty()) throw std::invalid_argument("compare_prune_strategies: empty test set");
  const RunConfig& cfg = ckpt.config;
  const TrainContext<float> ctx = make_context(cfg);
  const auto tau = cfg.train.sched.tau_g;
  PruneOutcome cal = run_prune_calibration(deployed_state(ckpt), make_calib_set(cfg, data), cfg, budget);

  StrategyTable table;
  table.calibration = cal.report;
  const Tensor<float>& probe = data.test_lq.front();
  auto score = [&](const std::string& name, const BackboneState<float>& s, std::vector<std::size_t> kept) {
    StrategyRow row;
    row.strategy = name;
    row.kept = std::move(kept);
    row.params = s.params.total_params();
    row.macs = mac_count(s.cfg, probe.dim(2), probe.dim(3)).total;
    const EvalMetrics m = evaluate(s, data.test_hq, data.test_lq, ctx, tau);
    row.psnr_y = m.psnr_y;
    row.ssim_y = m.ssim_y;
    row.latency_ms = median_ms([&] { restore(s, probe, ctx, tau); }, warmup, reps);
    table.rows.push_back(std::move(row));
  };
  std::vector<std::size_t> all(cal.merged.params.blocks.size());
  for (std::size_t l = 0; l < all.size(); ++l) all[l] = l;
  score("full", cal.merged, all);
  for (PruneStrategy st : strategies) {
    const auto kept = select_for_strategy(st, cal.merged, cal.report.saliency, budget, cfg.prune.seed);
    score(strategy_name(st), remove_blocks(cal.merged, kept), kept);
  }
  return table;
}

json StrategyTable::json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"strategy", r.strategy},
                      {"kept", r.kept},
                      {"params", r.params},
                      {"macs", r.macs},
                      {"psnr_y", r.psnr_y},
                      {"ssim_y", r.ssim_y},
                      {"latency_ms", r.latency_ms}});
  }
  return {{"rows", rows_j}, {"calibration", calibration.json()}};
}

const StrategyRow& StrategyTable::row(const std::string& strategy) const {
  for (const auto& r : rows)
    if (r.strategy == strategy) return r;
  throw std::out_of_range("StrategyTable: no row for " + strategy);
}

}  // namespace ldsr
