#include "ldsr/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ldsr/metrics.hpp"

namespace ldsr {

void TrainConfig::validate() const {
  if (steps == 0 || batch == 0 || crop == 0) throw std::invalid_argument("TrainConfig: steps, batch and crop must be positive");
  if (crop % kPatch) throw std::invalid_argument("TrainConfig: crop must be a multiple of 32");
  if (!(lr > 0) || weight_decay < 0 || grad_clip <= 0) throw std::invalid_argument("TrainConfig: invalid optimizer settings");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || ema_decay < 0 || ema_decay > 1) {
    throw std::invalid_argument("TrainConfig: betas and ema_decay must lie in [0, 1)");
  }
  weights.validate();
  sched.validate();
}

template <typename T>
CondBatch<T> build_conditions(const Tensor<T>& images, const TrainContext<T>& ctx) {
  CondBatch<T> out;
  for (std::size_t b = 0; b < images.dim(0); ++b) {
    const auto prompt = build_prompt(extract_tags(images, b, ctx.tags), ctx.prompt_template);
    out.push_back(encode_prompt(prompt, ctx.vocab, ctx.text_tokens));
  }
  return out;
}

template <typename T>
Trainer<T> Trainer<T>::create(const BackboneConfig& backbone, const LoraConfig& lora) {
  Trainer tr{BackboneState<T>::init(backbone), {}, {}};
  lora_inject(tr.state, lora);
  tr.ema = *tr.state.lora;
  for (auto& [name, p] : tr.state.lora->named()) {
    tr.adam.m.emplace_back(p->shape());
    tr.adam.v.emplace_back(p->shape());
  }
  return tr;
}

template <typename T>
BackboneState<T> Trainer<T>::ema_state() const {
  BackboneState<T> s = state;
  s.lora = ema;
  return s;
}

namespace {

template <typename T>
void add_into(LoraSet<T>& dst, const LoraSet<T>& src) {
  auto d = dst.named();
  const auto s = src.named();
  for (std::size_t i = 0; i < d.size(); ++i) axpy(T(1), *s[i].second, *d[i].second);
}

// Lines 1-4 of the training algorithm plus the reconstruction loss. The
// decode of z_L with its view replaced by v_hat is x_L + lift(v_hat - v_L).
template <typename T>
struct RestoreBranch {
  CondBatch<T> cond;
  Tensor<T> v_hat, v_h;
  ForwardResult<T> f1;
  LossGrad<T> rec;  // gradient w.r.t. the unclamped decode, zero where clamped
};

template <typename T>
RestoreBranch<T> restore_branch(const BackboneState<T>& state, const Tensor<T>& x_h,
                                const Tensor<T>& x_l, const TrainContext<T>& ctx,
                                const TrainConfig& cfg) {
  require_same_shape(x_h.shape(), x_l.shape(), "train objective");
  const T sg = static_cast<T>(sigma(static_cast<double>(cfg.sched.tau_g), static_cast<double>(cfg.sched.T)));
  RestoreBranch<T> r;
  r.cond = build_conditions(cfg.hq_prompt_source ? x_h : x_l, ctx);
  const Tensor<T> v_l = ctx.codec.encode_view(x_l);
  r.v_h = ctx.codec.encode_view(x_h);
  r.f1 = forward(state, v_l, static_cast<double>(cfg.sched.tau_g), r.cond, true);
  r.v_hat = v_l;
  axpy(-sg, r.f1.out, r.v_hat);
  Tensor<T> x_hat = x_l;
  axpy(-sg, ctx.codec.decode_view_delta(r.f1.out), x_hat);
  std::vector<std::uint8_t> inside(x_hat.size());
  for (std::size_t i = 0; i < x_hat.size(); ++i) {
    inside[i] = x_hat[i] >= T(0) && x_hat[i] <= T(1);
    x_hat[i] = std::clamp(x_hat[i], T(0), T(1));
  }
  r.rec = rec_loss_grad(x_hat, x_h, cfg.weights, ctx.perceptual);
  for (std::size_t i = 0; i < x_hat.size(); ++i)
    if (!inside[i]) r.rec.grad[i] = T(0);
  return r;
}

}  // namespace

template <typename T>
LossAndGrad<T> loss_and_lora_grad(const BackboneState<T>& state, const Tensor<T>& x_h,
                                  const Tensor<T>& x_l, const TrainContext<T>& ctx,
                                  const TrainConfig& cfg, std::int64_t t, const Tensor<T>& eps) {
  if (!state.lora) throw std::logic_error("train: LoRA adapters must be injected");
  const auto& w = cfg.weights;
  const double horizon = static_cast<double>(cfg.sched.T), td = static_cast<double>(t);
  const T sg = static_cast<T>(sigma(static_cast<double>(cfg.sched.tau_g), horizon));
  const T at = static_cast<T>(alpha(td, horizon));

  auto rb = restore_branch(state, x_h, x_l, ctx, cfg);
  LossAndGrad<T> out;
  out.parts.rec = rb.rec.value;

  // Matched perturbation in the backbone-facing latent space.
  require_same_shape(eps.shape(), rb.v_hat.shape(), "train objective eps");
  const Tensor<T> zt_hat = perturb(rb.v_hat, td, eps, horizon);
  const Tensor<T> zt_h = perturb(rb.v_h, td, eps, horizon);

  const bool through = !cfg.detach_align;
  const auto q_hat = forward(state, zt_hat, td, rb.cond, false, through);
  const auto q_h = forward(state, zt_h, td, rb.cond, false, false);
  const auto q_th = forward(state, zt_hat, td, rb.cond, true);

  auto align = align_loss_grad(q_hat.out, q_h.out);
  auto cons = cons_loss_grad(q_th.out, q_hat.out);
  out.parts.align = align.value;
  out.parts.cons = cons.value;
  out.total = total_loss(out.parts, w);

  Tensor<T> dq_th = cons.grad;
  for (auto& e : dq_th.data()) e *= static_cast<T>(w.lambda_c);
  const auto g_th = backward(q_th, dq_th, BackwardRequest{false, true, through});
  out.grad = *g_th.lora;

  Tensor<T> dv_hat = ctx.codec.decode_view_grad(rb.rec.grad);
  if (through) {
    Tensor<T> dq_hat = align.grad;
    for (auto& e : dq_hat.data()) e *= static_cast<T>(w.lambda_a);
    axpy(static_cast<T>(-w.lambda_c), cons.grad, dq_hat);
    const auto g_hat = backward(q_hat, dq_hat, BackwardRequest{false, false, true});
    axpy(at, *g_hat.input, dv_hat);
    axpy(at, *g_th.input, dv_hat);
  }
  for (auto& e : dv_hat.data()) e *= -sg;
  const auto g1 = backward(rb.f1, dv_hat, BackwardRequest{false, true, false});
  add_into(out.grad, *g1.lora);
  return out;
}

template <typename T>
CalibGrad<T> calibration_grad(const BackboneState<T>& state, const Tensor<T>& x_h,
                              const Tensor<T>& x_l, const TrainContext<T>& ctx,
                              const TrainConfig& cfg, std::int64_t t, const Tensor<T>& eps) {
  const auto& w = cfg.weights;
  const double horizon = static_cast<double>(cfg.sched.T), td = static_cast<double>(t);
  const T sg = static_cast<T>(sigma(static_cast<double>(cfg.sched.tau_g), horizon));
  const T at = static_cast<T>(alpha(td, horizon));

  auto rb = restore_branch(state, x_h, x_l, ctx, cfg);
  CalibGrad<T> out;
  out.omega = omega(td, horizon);
  out.parts.rec = rb.rec.value;
  require_same_shape(eps.shape(), rb.v_hat.shape(), "calibration eps");
  const auto q_hat = forward(state, perturb(rb.v_hat, td, eps, horizon), td, rb.cond, false, true);
  const auto q_h = forward(state, perturb(rb.v_h, td, eps, horizon), td, rb.cond, false, false);
  auto align = align_loss_grad(q_hat.out, q_h.out);
  out.parts.align = align.value;
  out.value = calib_loss(out.parts, w, out.omega);

  const T om = static_cast<T>(out.omega);
  for (auto& e : align.grad.data()) e *= static_cast<T>(w.lambda_a) * om;
  const auto g_hat = backward(q_hat, align.grad, BackwardRequest{false, false, true});
  for (auto& e : rb.rec.grad.data()) e *= om;
  Tensor<T> dv_hat = ctx.codec.decode_view_grad(rb.rec.grad);
  axpy(at, *g_hat.input, dv_hat);
  for (auto& e : dv_hat.data()) e *= -sg;
  out.grad = std::move(*backward(rb.f1, dv_hat, BackwardRequest{true, false, false}).params);
  return out;
}

template <typename T>
StepRecord train_step(Trainer<T>& tr, const Tensor<T>& x_h, const Tensor<T>& x_l,
                      const TrainContext<T>& ctx, const TrainConfig& cfg, Rng& rng) {
  const std::int64_t t = sample_timestep(rng, cfg.sched);
  const Shape view{x_l.dim(0), ctx.codec.latent_channels(), x_l.dim(2) / kPatch, x_l.dim(3) / kPatch};
  const Tensor<T> eps = gaussian_fill<T>(rng, view);
  auto lg = loss_and_lora_grad(tr.state, x_h, x_l, ctx, cfg, t, eps);

  StepRecord rec{lg.parts, lg.total, t, 0.0};
  auto grads = lg.grad.named();
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += static_cast<double>(sum_squares(*g));
  rec.grad_norm = std::sqrt(sq);
  if (!std::isfinite(rec.grad_norm)) throw NonFiniteError("train_step: non-finite LoRA gradient");
  const double clip = rec.grad_norm > cfg.grad_clip ? cfg.grad_clip / (rec.grad_norm + 1e-6) : 1.0;

  auto& adam = tr.adam;
  ++adam.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
  const T step = static_cast<T>(cfg.lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps_a = static_cast<T>(cfg.adam_eps);
  const T ed = static_cast<T>(cfg.ema_decay);
  auto params = tr.state.lora->named();
  auto ema = tr.ema.named();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k].second;
    const Tensor<T>& g = *grads[k].second;
    Tensor<T>& m = adam.m[k];
    Tensor<T>& v = adam.v[k];
    Tensor<T>& e = *ema[k].second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T gi = static_cast<T>(g[i] * clip);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      p[i] *= decay;
      p[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps_a);
      e[i] = ed * e[i] + (T(1) - ed) * p[i];
    }
  }
  return rec;
}

template <typename T>
Tensor<T> restore(const BackboneState<T>& state, const Tensor<T>& x_l, const TrainContext<T>& ctx,
                  std::int64_t tau_g) {
  const CondBatch<T> cond = build_conditions(x_l, ctx);
  const Latent<T> z = ctx.codec.encode(x_l);
  const Tensor<T> v_hat = one_step_restore(state, z.view(), static_cast<double>(tau_g), cond);
  return ctx.codec.decode(z.with_view(v_hat), true);
}

template <typename T>
EvalMetrics evaluate(const BackboneState<T>& state, const std::vector<Tensor<T>>& hq,
                     const std::vector<Tensor<T>>& lq, const TrainContext<T>& ctx,
                     std::int64_t tau_g) {
  if (hq.size() != lq.size() || hq.empty()) throw std::invalid_argument("evaluate: mismatched or empty sets");
  EvalMetrics m;
  for (std::size_t i = 0; i < hq.size(); ++i) {
    const Tensor<T> out = restore(state, lq[i], ctx, tau_g);
    m.psnr_y += report_psnr(psnr_y(out, hq[i]));
    m.ssim_y += ssim_y(out, hq[i]);
    m.baseline_psnr_y += report_psnr(psnr_y(lq[i], hq[i]));
  }
  const double n = static_cast<double>(hq.size());
  m.psnr_y /= n;
  m.ssim_y /= n;
  m.baseline_psnr_y /= n;
  m.images = hq.size();
  return m;
}

#define LDSR_TRAIN_INST(T)                                                                        \
  template CondBatch<T> build_conditions(const Tensor<T>&, const TrainContext<T>&);               \
  template struct Trainer<T>;                                                                     \
  template LossAndGrad<T> loss_and_lora_grad(const BackboneState<T>&, const Tensor<T>&,           \
                                             const Tensor<T>&, const TrainContext<T>&,            \
                                             const TrainConfig&, std::int64_t, const Tensor<T>&); \
  template CalibGrad<T> calibration_grad(const BackboneState<T>&, const Tensor<T>&,              \
                                         const Tensor<T>&, const TrainContext<T>&,               \
                                         const TrainConfig&, std::int64_t, const Tensor<T>&);    \
  template StepRecord train_step(Trainer<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                 const TrainContext<T>&, const TrainConfig&, Rng&);               \
  template Tensor<T> restore(const BackboneState<T>&, const Tensor<T>&, const TrainContext<T>&,   \
                             std::int64_t);                                                       \
  template EvalMetrics evaluate(const BackboneState<T>&, const std::vector<Tensor<T>>&,           \
                                const std::vector<Tensor<T>>&, const TrainContext<T>&, std::int64_t);

LDSR_TRAIN_INST(float)
LDSR_TRAIN_INST(double)

}  // namespace ldsr
