#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ldsr/backbone.hpp"
#include "ldsr/codec.hpp"
#include "ldsr/data.hpp"
#include "ldsr/objectives.hpp"
#include "ldsr/prompt.hpp"
#include "ldsr/schedule.hpp"

namespace ldsr {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::size_t crop = 512;
  double lr = 5e-5;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  double ema_decay = 0.999;
  LossWeights weights;
  SchedulerConfig sched;
  bool detach_align = false;      // stop gradients into z_hat from the align/cons branches
  bool hq_prompt_source = false;  // tags from x_H instead of x_L
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Frozen assets shared by training, calibration and inference.
template <typename T>
struct TrainContext {
  CodecState<T> codec;
  Vocabulary<T> vocab;
  TagTable tags = TagTable::defaults();
  PerceptualNet<T> perceptual;
  std::string prompt_template{kQualityTemplate};
  std::size_t text_tokens = 32;

  explicit TrainContext(const CodecConfig& codec_cfg = {}, const VocabConfig& vocab_cfg = {})
      : codec(codec_cfg), vocab(vocab_cfg) {}
};

/// Prompt conditions for every sample of a batch, tags taken from `images`.
template <typename T>
CondBatch<T> build_conditions(const Tensor<T>& images, const TrainContext<T>& ctx);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

/// LoRA-adapted backbone with optimizer and EMA state.
template <typename T>
struct Trainer {
  BackboneState<T> state;
  LoraSet<T> ema;
  AdamState<T> adam;

  static Trainer create(const BackboneConfig& backbone, const LoraConfig& lora);
  /// Copy of the state whose adapters are the EMA weights.
  BackboneState<T> ema_state() const;
};

struct StepRecord {
  LossParts parts;
  double total = 0.0;
  std::int64_t t = 0;
  double grad_norm = 0.0;  // before clipping
};

/// One optimization step on a (x_H, x_L) batch. Only LoRA factors change.
/// Throws NonFiniteError before touching any parameter if a loss is not finite.
template <typename T>
StepRecord train_step(Trainer<T>& tr, const Tensor<T>& x_h, const Tensor<T>& x_l,
                      const TrainContext<T>& ctx, const TrainConfig& cfg, Rng& rng);

/// Loss parts and the gradient of total_loss w.r.t. every LoRA factor for a
/// fixed noise pair. train_step = this + clip + AdamW + EMA.
template <typename T>
struct LossAndGrad {
  LossParts parts;
  double total = 0.0;
  LoraSet<T> grad;
};

template <typename T>
LossAndGrad<T> loss_and_lora_grad(const BackboneState<T>& state, const Tensor<T>& x_h,
                                  const Tensor<T>& x_l, const TrainContext<T>& ctx,
                                  const TrainConfig& cfg, std::int64_t t, const Tensor<T>& eps);

/// Calibration objective omega(t) (rec + lambda_a align) and its gradient
/// w.r.t. the dense f_theta parameters (typically after lora_merge).
template <typename T>
struct CalibGrad {
  LossParts parts;
  double omega = 0.0;
  double value = 0.0;
  BackboneWeights<T> grad;
};

template <typename T>
CalibGrad<T> calibration_grad(const BackboneState<T>& state, const Tensor<T>& x_h,
                              const Tensor<T>& x_l, const TrainContext<T>& ctx,
                              const TrainConfig& cfg, std::int64_t t, const Tensor<T>& eps);

/// One-step restoration of an aligned LQ batch (B x 3 x H x W, H and W
/// multiples of 32): encode, z_hat = z_L - sigma(tau_g) f_theta, decode, clamp.
template <typename T>
Tensor<T> restore(const BackboneState<T>& state, const Tensor<T>& x_l, const TrainContext<T>& ctx,
                  std::int64_t tau_g);

struct EvalMetrics {
  double psnr_y = 0.0;  // mean over images, each capped at 100
  double ssim_y = 0.0;
  double baseline_psnr_y = 0.0;  // degraded input vs reference
  std::size_t images = 0;
};

template <typename T>
EvalMetrics evaluate(const BackboneState<T>& state, const std::vector<Tensor<T>>& hq,
                     const std::vector<Tensor<T>>& lq, const TrainContext<T>& ctx,
                     std::int64_t tau_g);

}  // namespace ldsr
