#pragma once

#include <algorithm>
#include <string>
#include <utility>

#include "ldsr/backbone.hpp"
#include "ldsr/config.hpp"
#include "ldsr/grad_check.hpp"
#include "ldsr/prompt.hpp"
#include "ldsr/rng.hpp"
#include "ldsr/train.hpp"

namespace ldsr::testing {

/// 2-block, d=16 toy used by the gradient checks.
inline BackboneConfig tiny_config() {
  BackboneConfig c;
  c.blocks = 2;
  c.width = 16;
  c.heads = 2;
  c.ffn_width = 32;
  c.text_width = 8;
  c.text_tokens = 5;
  c.latent_channels = 4;
  c.seed = 77;
  c.out_gain = 1.0;
  c.mod_gain = 0.5;
  return c;
}

template <typename T>
PromptCondition<T> random_condition(Rng& rng, std::size_t tokens, std::size_t width,
                                    std::vector<std::uint8_t> mask = {}) {
  PromptCondition<T> c{gaussian_fill<T>(rng, {tokens, width}), std::move(mask)};
  if (c.m.empty()) {
    c.m.assign(tokens, 1);
    c.m.back() = 0;
  }
  return c;
}

/// Full training objective on the tiny backbone in float64: two 32x64
/// images, every LoRA target adapted, nonzero B factors.
struct TinyTrainProblem {
  TrainContext<double> ctx;
  BackboneState<double> state;
  TrainConfig cfg;
  Tensor<double> x_h, x_l, eps;
  std::int64_t t = 300;

  explicit TinyTrainProblem(bool ffn_targets = true)
      : ctx(CodecConfig{0xC0DEC, 4, 0.1}, VocabConfig{512, 8, 5}),
        state(BackboneState<double>::init(tiny_config())) {
    ctx.text_tokens = 5;
    LoraConfig lc;
    lc.rank = 2;
    lc.alpha = 4.0;
    lc.ffn_targets = ffn_targets;
    lora_inject(state, lc);
    Rng rng(41);
    for (auto& [name, p] : state.lora->named())
      if (name.back() == 'b') *p = gaussian_fill<double>(rng, p->shape(), 0.2);
    x_h = Tensor<double>({2, 3, 32, 64});
    for (auto& e : x_h.data()) e = rng.uniform(0.3, 0.7);
    x_l = x_h;
    for (auto& e : x_l.data()) e += rng.uniform(-0.05, 0.05);
    eps = gaussian_fill<double>(rng, {2, 4, 1, 2});
  }

  double loss() const { return loss_and_lora_grad(state, x_h, x_l, ctx, cfg, t, eps).total; }
};

/// Worst relative error between analytic and central-difference LoRA
/// gradients of the total objective, with a floor of 1e-6 x max |numeric|.
inline std::pair<double, std::string> total_loss_grad_error(TinyTrainProblem& p) {
  const auto analytic = loss_and_lora_grad(p.state, p.x_h, p.x_l, p.ctx, p.cfg, p.t, p.eps);
  auto params = p.state.lora->named();
  const auto grads = analytic.grad.named();
  std::vector<Tensor<double>> numeric;
  double scale_max = 0.0;
  for (const auto& [name, ptr] : params) {
    const Tensor<double> orig = *ptr;
    numeric.push_back(finite_diff_grad(
        [&, ptr = ptr](const Tensor<double>& x) {
          *ptr = x;
          return p.loss();
        },
        orig));
    *ptr = orig;
    scale_max = std::max(scale_max, max_abs(numeric.back()));
  }
  double worst = 0.0;
  std::string worst_name;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double err = max_relative_error(*grads[i].second, numeric[i], 1e-6 * scale_max);
    if (err > worst) worst = err, worst_name = params[i].first;
  }
  return {worst, worst_name};
}

/// 3-block, d=16 run with 64x64 crops and a handful of images.
inline RunConfig small_run_config() {
  RunConfig c;
  c.backbone.blocks = 3;
  c.backbone.width = 16;
  c.backbone.heads = 2;
  c.backbone.ffn_width = 32;
  c.backbone.text_width = 8;
  c.backbone.text_tokens = 6;
  c.backbone.latent_channels = 8;
  c.codec.latent_channels = 8;
  c.vocab = VocabConfig{512, 8, 3};
  c.lora.rank = 4;
  c.lora.alpha = 4.0;
  c.train.steps = 17;
  c.train.batch = 2;
  c.train.crop = 64;
  c.train.lr = 1e-3;
  c.train.eval_every = 10;
  c.data.train_images = 4;
  c.data.val_images = 2;
  c.data.test_images = 2;
  c.data.eval_size = 64;
  c.prune.calib_steps = 4;
  c.prompt_template = "sharp, clean";
  return c;
}

}  // namespace ldsr::testing
