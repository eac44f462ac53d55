#include "ldsr/pipeline.hpp"

#include <limits>
#include <stdexcept>

#include "ldsr/metrics.hpp"

namespace ldsr {

namespace {

std::vector<Tensor<float>> degrade_each(const std::vector<Tensor<float>>& hq, const DegradationConfig& cfg,
                                        Rng rng) {
  std::vector<Tensor<float>> lq;
  lq.reserve(hq.size());
  for (const auto& x : hq) lq.push_back(synthesize_degradation(x, cfg, rng));
  return lq;
}

}  // namespace

ToyData make_toy_data(const RunConfig& cfg) {
  cfg.validate();
  const auto& d = cfg.data;
  const std::size_t size = d.train_size ? d.train_size : cfg.train.crop + kPatch;
  ToyData out;
  out.train = generate_toy_dataset<float>(d.train_images, size, size, d.seed);
  out.val_hq = generate_toy_dataset<float>(d.val_images, d.eval_size, d.eval_size, mix64(d.seed ^ 0x5A1));
  out.test_hq = generate_toy_dataset<float>(d.test_images, d.eval_size, d.eval_size, mix64(d.seed ^ 0x7E57));
  const Rng base(cfg.degradation.seed);
  out.val_lq = degrade_each(out.val_hq, cfg.degradation, base.split(1));
  out.test_lq = degrade_each(out.test_hq, cfg.degradation, base.split(2));
  return out;
}

TrainContext<float> make_context(const RunConfig& cfg) {
  TrainContext<float> ctx(cfg.codec, cfg.vocab);
  ctx.prompt_template = cfg.prompt_template;
  ctx.text_tokens = cfg.backbone.text_tokens;
  return ctx;
}

TrainResult train_run(const RunConfig& cfg, const ToyData& data, const TrainProgress& progress) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train_run: empty training pool");
  const TrainContext<float> ctx = make_context(cfg);
  const auto& tc = cfg.train;
  Trainer<float> tr = Trainer<float>::create(cfg.backbone, cfg.lora);
  const Rng root(tc.seed);
  Rng data_rng = root.split(10), noise_rng = root.split(11);

  TrainResult res;
  res.best_val.psnr_y = -std::numeric_limits<double>::infinity();
  std::optional<LoraSet<float>> best_raw, best_ema;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  const auto n = static_cast<std::int64_t>(data.train.size());
  for (std::size_t step = 1; step <= tc.steps; ++step) {
    std::vector<Tensor<float>> crops;
    for (std::size_t b = 0; b < tc.batch; ++b) {
      crops.push_back(random_crop(data.train[static_cast<std::size_t>(data_rng.uniform_int(0, n - 1))], tc.crop, data_rng));
    }
    const Tensor<float> x_h = stack_batch(crops);
    const Tensor<float> x_l = synthesize_degradation(x_h, cfg.degradation, data_rng);
    const StepRecord rec = train_step(tr, x_h, x_l, ctx, tc, noise_rng);
    res.steps.push_back(rec);
    loss_sum += rec.total;
    ++loss_count;

    if ((tc.eval_every && step % tc.eval_every == 0) || step == tc.steps) {
      EvalRecord er{step, loss_sum / static_cast<double>(loss_count),
                    evaluate(tr.ema_state(), data.val_hq, data.val_lq, ctx, tc.sched.tau_g),
                    evaluate(tr.state, data.val_hq, data.val_lq, ctx, tc.sched.tau_g)};
      loss_sum = 0.0;
      loss_count = 0;
      const bool raw_wins = er.raw.psnr_y > er.val.psnr_y;
      const EvalMetrics& cand = raw_wins ? er.raw : er.val;
      if (cand.psnr_y > res.best_val.psnr_y) {
        res.best_val = cand;
        res.best_step = step;
        res.best_is_ema = !raw_wins;
        best_raw = *tr.state.lora;
        best_ema = tr.ema;
      }
      res.history.push_back(er);
      if (progress) progress(er);
    }
  }

  Checkpoint& ck = res.best;
  ck.config = cfg;
  ck.state = tr.state;
  ck.state.lora = std::move(*best_raw);
  ck.ema = std::move(best_ema);
  ck.deploy_ema = res.best_is_ema;
  ck.original_blocks = cfg.backbone.blocks;
  res.test = evaluate(deployed_state(ck), data.test_hq, data.test_lq, ctx, tc.sched.tau_g);
  ck.extra["best_step"] = res.best_step;
  ck.extra["best_is_ema"] = res.best_is_ema;
  ck.extra["val"] = metrics_json(res.best_val);
  ck.extra["test"] = metrics_json(res.test);
  return res;
}

CalibSet make_calib_set(const RunConfig& cfg, const ToyData& data) {
  if (data.train.empty()) throw std::invalid_argument("make_calib_set: empty training pool");
  Rng rng = Rng(cfg.prune.seed).split(1);
  CalibSet set;
  for (const auto& img : data.train) {
    Tensor<float> hq = random_crop(img, cfg.train.crop, rng);
    set.lq.push_back(synthesize_degradation(hq, cfg.degradation, rng));
    set.hq.push_back(std::move(hq));
  }
  return set;
}

PruneOutcome run_prune_calibration(const BackboneState<float>& dense, const CalibSet& calib,
                                   const RunConfig& cfg, std::size_t budget) {
  if (calib.hq.empty() || calib.hq.size() != calib.lq.size()) {
    throw std::invalid_argument("run_prune_calibration: empty calibration set");
  }
  const TrainContext<float> ctx = make_context(cfg);
  PruneOutcome out;
  out.merged = dense;
  if (out.merged.lora) lora_merge(out.merged);

  CalibAccumulator acc = CalibAccumulator::for_blocks(out.merged.params);
  Rng rng = Rng(cfg.prune.seed).split(2);
  const auto n = static_cast<std::int64_t>(calib.hq.size());
  const std::size_t C = cfg.backbone.latent_channels;
  for (std::size_t k = 0; k < cfg.prune.calib_steps; ++k) {
    std::vector<Tensor<float>> hs, ls;
    for (std::size_t b = 0; b < cfg.prune.calib_batch; ++b) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
      hs.push_back(calib.hq[i]);
      ls.push_back(calib.lq[i]);
    }
    const Tensor<float> x_h = stack_batch(hs), x_l = stack_batch(ls);
    const std::int64_t t = sample_timestep(rng, cfg.train.sched);
    const Tensor<float> eps =
        gaussian_fill<float>(rng, {x_h.dim(0), C, x_h.dim(2) / kPatch, x_h.dim(3) / kPatch});
    const CalibGrad<float> g = calibration_grad(out.merged, x_h, x_l, ctx, cfg.train, t, eps);
    std::vector<std::pair<std::string, const Tensor<float>*>> grads;
    for (const auto& [name, t_grad] : g.grad.named())
      if (name.rfind("blocks.", 0) == 0) grads.emplace_back(name, t_grad);
    acc.accumulate(grads, g.omega);
  }
  acc.finalize();

  PruneReport& r = out.report;
  r.strategy = strategy_name(PruneStrategy::saliency);
  r.saliency = block_saliency(out.merged.params, acc);
  for (std::size_t l = 0; l < out.merged.params.blocks.size(); ++l) r.sizes.push_back(out.merged.params.block_params(l));
  r.fixed = out.merged.params.fixed_params();
  r.budget = budget;
  r.kept = select_blocks(r.saliency, r.sizes, r.fixed, budget);
  r.total_params_before = out.merged.params.total_params();
  out.pruned = remove_blocks(out.merged, r.kept);
  r.total_params_after = out.pruned.params.total_params();
  r.calib_steps = acc.steps();
  return out;
}

std::vector<std::size_t> select_for_strategy(PruneStrategy s, const BackboneState<float>& merged,
                                             const std::vector<double>& saliency, std::size_t budget,
                                             std::uint64_t seed) {
  std::vector<std::size_t> sizes;
  for (std::size_t l = 0; l < merged.params.blocks.size(); ++l) sizes.push_back(merged.params.block_params(l));
  const std::size_t fixed = merged.params.fixed_params();
  switch (s) {
    case PruneStrategy::saliency: return select_blocks(saliency, sizes, fixed, budget);
    case PruneStrategy::tail: return select_tail(sizes, fixed, budget);
    case PruneStrategy::random: return select_random(sizes, fixed, budget, seed);
    case PruneStrategy::magnitude: return select_magnitude(merged.params, fixed, budget);
  }
  throw std::invalid_argument("select_for_strategy: unknown strategy");
}

nlohmann::json metrics_json(const EvalMetrics& m) {
  return {{"psnr_y", m.psnr_y}, {"ssim_y", m.ssim_y}, {"baseline_psnr_y", m.baseline_psnr_y}, {"images", m.images}};
}

}  // namespace ldsr
