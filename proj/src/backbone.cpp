#include "ldsr/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ldsr/attention.hpp"
#include "ldsr/rng.hpp"
#include "ldsr/schedule.hpp"

namespace ldsr {

void BackboneConfig::validate() const {
  if (blocks < 2 && blocks != 0) {
    // L=0 is accepted only for MAC accounting of the bare codec/patch path.
    throw std::invalid_argument("BackboneConfig: need L >= 2 blocks");
  }
  if (width == 0 || heads == 0 || width % heads) {
    throw std::invalid_argument("BackboneConfig: width must be a positive multiple of heads");
  }
  if (width % 4) throw std::invalid_argument("BackboneConfig: width must be a multiple of 4");
  if (ffn_width == 0 || text_width == 0 || latent_channels == 0) {
    throw std::invalid_argument("BackboneConfig: zero-sized dimension");
  }
  if (eps_att < 0) throw std::invalid_argument("BackboneConfig: eps_att must be >= 0");
}

const char* block_proj_name(std::size_t p) {
  static const char* names[kNumBlockProj] = {"sa_q", "sa_k", "sa_v", "sa_o", "ca_q", "ca_k",
                                             "ca_v", "ca_o", "ff_in", "ff_out", "mod"};
  return names[p];
}

bool LoraConfig::targets(std::size_t proj) const {
  if (proj <= kCaO) return true;
  if (proj == kFfIn || proj == kFfOut) return ffn_targets;
  return false;
}

namespace {

std::pair<std::size_t, std::size_t> proj_dims(const BackboneConfig& c, std::size_t p) {
  const std::size_t d = c.width;
  switch (p) {
    case kCaK:
    case kCaV: return {d, c.text_width};
    case kFfIn: return {c.ffn_width, d};
    case kFfOut: return {d, c.ffn_width};
    case kMod: return {6 * d, d};
    default: return {d, d};
  }
}

template <typename T>
Linear<T> init_linear(Rng& rng, std::size_t out, std::size_t in, double gain) {
  return {gaussian_fill<T>(rng, {out, in}, gain / std::sqrt(static_cast<double>(in))),
          Tensor<T>({out})};
}

template <typename T>
void push_linear(std::vector<std::pair<std::string, T*>>& out, const std::string& prefix, auto& lin) {
  out.emplace_back(prefix + ".w", &lin.w);
  out.emplace_back(prefix + ".b", &lin.b);
}

}  // namespace

template <typename T>
std::size_t BlockWeights<T>::params() const {
  std::size_t n = 0;
  for (const auto& p : proj) n += p.params();
  return n;
}

template <typename T>
std::size_t BackboneWeights<T>::fixed_params() const {
  return patch_in.params() + t_fc1.params() + t_fc2.params() + patch_out.params();
}

template <typename T>
std::size_t BackboneWeights<T>::total_params() const {
  std::size_t n = fixed_params();
  for (const auto& b : blocks) n += b.params();
  return n;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> BackboneWeights<T>::named() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  push_linear<Tensor<T>>(out, "patch_in", patch_in);
  push_linear<Tensor<T>>(out, "t_fc1", t_fc1);
  push_linear<Tensor<T>>(out, "t_fc2", t_fc2);
  push_linear<Tensor<T>>(out, "patch_out", patch_out);
  for (std::size_t l = 0; l < blocks.size(); ++l)
    for (std::size_t p = 0; p < kNumBlockProj; ++p)
      push_linear<Tensor<T>>(out, "blocks." + std::to_string(l) + "." + block_proj_name(p),
                             blocks[l].proj[p]);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> BackboneWeights<T>::named() const {
  auto mut = const_cast<BackboneWeights*>(this)->named();
  return {mut.begin(), mut.end()};
}

template <typename T>
BackboneWeights<T> BackboneWeights<T>::zeros_like() const {
  BackboneWeights z = *this;
  for (auto& [name, t] : z.named()) t->fill(T(0));
  return z;
}

template <typename T>
std::size_t LoraSet<T>::params() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> LoraSet<T>::named() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t l = 0; l < blocks.size(); ++l)
    for (std::size_t p = 0; p < kNumBlockProj; ++p) {
      auto& lp = blocks[l][p];
      if (!lp.active()) continue;
      const std::string prefix = "blocks." + std::to_string(l) + "." + block_proj_name(p);
      out.emplace_back(prefix + ".a", &lp.a);
      out.emplace_back(prefix + ".b", &lp.b);
    }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> LoraSet<T>::named() const {
  auto mut = const_cast<LoraSet*>(this)->named();
  return {mut.begin(), mut.end()};
}

template <typename T>
LoraSet<T> LoraSet<T>::zeros_like() const {
  LoraSet z = *this;
  for (auto& [name, t] : z.named()) t->fill(T(0));
  return z;
}

std::size_t block_param_count(const BackboneConfig& cfg) {
  std::size_t n = 0;
  for (std::size_t p = 0; p < kNumBlockProj; ++p) {
    auto [o, i] = proj_dims(cfg, p);
    n += o * i + o;
  }
  return n;
}

std::size_t fixed_param_count(const BackboneConfig& cfg) {
  const std::size_t d = cfg.width, c = cfg.latent_channels;
  return (d * c + d) + 2 * (d * d + d) + (c * d + c);
}

template <typename T>
BackboneState<T> BackboneState<T>::init(const BackboneConfig& cfg) {
  cfg.validate();
  BackboneState s;
  s.cfg = cfg;
  Rng rng(cfg.seed);
  const std::size_t d = cfg.width, c = cfg.latent_channels;
  auto& w = s.params;
  w.patch_in = init_linear<T>(rng, d, c, 1.0);
  w.t_fc1 = init_linear<T>(rng, d, d, 1.0);
  w.t_fc2 = init_linear<T>(rng, d, d, 1.0);
  w.blocks.resize(cfg.blocks);
  for (auto& blk : w.blocks)
    for (std::size_t p = 0; p < kNumBlockProj; ++p) {
      auto [o, i] = proj_dims(cfg, p);
      blk.proj[p] = init_linear<T>(rng, o, i, p == kMod ? cfg.mod_gain : 1.0);
    }
  w.patch_out = init_linear<T>(rng, c, d, cfg.out_gain);
  s.frozen = std::make_shared<const BackboneWeights<T>>(w);
  return s;
}

template <typename T>
double BackboneState<T>::eps_att() const {
  return cfg.eps_att > 0 ? cfg.eps_att : default_eps_att<T>();
}

template <typename T>
Tensor<T> position_table(std::size_t h, std::size_t w, std::size_t d, double amplitude) {
  if (d % 4) throw std::invalid_argument("position_table: d must be a multiple of 4");
  const std::size_t quarter = d / 4;
  Tensor<T> pos({h * w, d});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      T* row = pos.ptr() + (y * w + x) * d;
      for (std::size_t k = 0; k < quarter; ++k) {
        const double f = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(quarter));
        row[k] = static_cast<T>(amplitude * std::sin(static_cast<double>(y) * f));
        row[quarter + k] = static_cast<T>(amplitude * std::cos(static_cast<double>(y) * f));
        row[2 * quarter + k] = static_cast<T>(amplitude * std::sin(static_cast<double>(x) * f));
        row[3 * quarter + k] = static_cast<T>(amplitude * std::cos(static_cast<double>(x) * f));
      }
    }
  return pos;
}

template <typename T>
std::vector<T> timestep_embedding(double t, std::size_t d) {
  const std::size_t half = d / 2;
  std::vector<T> e(d, T(0));
  for (std::size_t k = 0; k < half; ++k) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    e[k] = static_cast<T>(std::cos(t * f));
    e[half + k] = static_cast<T>(std::sin(t * f));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Forward / backward.

namespace {

thread_local std::uint64_t g_forward_calls = 0;

template <typename T>
T rms_eps() {
  return sizeof(T) == sizeof(float) ? T(1e-6) : T(1e-12);
}

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

template <typename T>
void ensure(Tensor<T>& t, const Shape& shape) {
  if (t.shape() != shape) t = Tensor<T>(shape);
}

template <typename T>
void ensure(std::vector<T>& v, std::size_t n) {
  if (v.size() != n) v.assign(n, T(0));
}

/// y = x W^T + b (+ s (x A^T) B^T). `u` receives x A^T when adapted.
template <typename T>
void lin_fwd(const Linear<T>& W, const LoraPair<T>* lp, T s, const T* x, std::size_t rows, T* y,
             Tensor<T>* u) {
  const std::size_t in = W.in(), out = W.out();
  gemm_nt(rows, out, in, x, in, W.w.ptr(), in, y, out, false);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < out; ++j) y[i * out + j] += W.b[j];
  if (lp && lp->active()) {
    const std::size_t r = lp->a.dim(0);
    ensure(*u, {rows, r});
    gemm_nt(rows, r, in, x, in, lp->a.ptr(), in, u->ptr(), r, false);
    std::vector<T> tmp(rows * out);
    gemm_nt(rows, out, r, u->ptr(), r, lp->b.ptr(), r, tmp.data(), out, false);
    for (std::size_t i = 0; i < rows * out; ++i) y[i] += s * tmp[i];
  }
}

/// Accumulates parameter gradients into gW / gL (when non-null) and the input
/// gradient into dx (when non-null).
template <typename T>
void lin_bwd(const Linear<T>& W, const LoraPair<T>* lp, T s, const T* x, std::size_t rows,
             const T* dy, const Tensor<T>* u, T* dx, Linear<T>* gW, LoraPair<T>* gL) {
  const std::size_t in = W.in(), out = W.out();
  if (gW) {
    gemm_tn(out, in, rows, dy, out, x, in, gW->w.ptr(), in, true);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < out; ++j) gW->b[j] += dy[i * out + j];
  }
  if (dx) gemm_nn(rows, in, out, dy, out, W.w.ptr(), in, dx, in, true);
  if (lp && lp->active() && (gL || dx)) {
    const std::size_t r = lp->a.dim(0);
    std::vector<T> du(rows * r);
    gemm_nn(rows, r, out, dy, out, lp->b.ptr(), r, du.data(), r, false);
    for (auto& e : du) e *= s;
    if (gL) {
      std::vector<T> gb(out * r);
      gemm_tn(out, r, rows, dy, out, u->ptr(), r, gb.data(), r, false);
      for (std::size_t i = 0; i < gb.size(); ++i) gL->b[i] += s * gb[i];
      gemm_tn(r, in, rows, du.data(), r, x, in, gL->a.ptr(), in, true);
    }
    if (dx) gemm_nn(rows, in, r, du.data(), r, lp->a.ptr(), in, dx, in, true);
  }
}

/// n = x / sqrt(mean(x^2) + eps) per row; r holds the denominators.
template <typename T>
void rms_fwd(const Tensor<T>& x, Tensor<T>& n, std::vector<T>& r) {
  const std::size_t rows = x.dim(0), d = x.dim(1);
  ensure(n, x.shape());
  ensure(r, rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xi = x.ptr() + i * d;
    T ss = T(0);
    for (std::size_t j = 0; j < d; ++j) ss += xi[j] * xi[j];
    r[i] = std::sqrt(ss / static_cast<T>(d) + rms_eps<T>());
    const T inv = T(1) / r[i];
    for (std::size_t j = 0; j < d; ++j) n.ptr()[i * d + j] = xi[j] * inv;
  }
}

/// dx += (dn - n * mean(dn * n)) / r
template <typename T>
void rms_bwd(const Tensor<T>& n, const std::vector<T>& r, const T* dn, T* dx) {
  const std::size_t rows = n.dim(0), d = n.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* ni = n.ptr() + i * d;
    const T* gi = dn + i * d;
    T m = T(0);
    for (std::size_t j = 0; j < d; ++j) m += gi[j] * ni[j];
    m /= static_cast<T>(d);
    const T inv = T(1) / r[i];
    for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += (gi[j] - ni[j] * m) * inv;
  }
}

}  // namespace

template <typename T>
struct BlockCache {
  Tensor<T> x_in, n1, a1, q, k, v, pq, pk, att, sa, x1;
  std::vector<T> r1, kv, ksum, den;
  Tensor<T> n2, cq, ck, cv, catt, ca, x2;
  std::vector<T> r2, probs;
  Tensor<T> n3, a3, hpre, hact, ffo;
  std::vector<T> r3;
  std::vector<T> mod;  // 6d
  std::array<Tensor<T>, kNumBlockProj> u;
};

template <typename T>
struct ForwardPass {
  BackboneConfig cfg;
  const BackboneWeights<T>* w = nullptr;
  const LoraSet<T>* lora = nullptr;
  T lora_scale = T(0);
  bool adapted = false;
  std::size_t B = 0, h = 0, wd = 0, N = 0, R = 0, nt = 0;
  T eps = T(0);

  Tensor<T> tokens;  // R x C
  Tensor<T> text;    // B*nt x d_t
  std::vector<std::uint8_t> mask;  // B*nt
  std::vector<T> temb, t1pre, t1act, e, se;
  std::vector<BlockCache<T>> blocks;
  Tensor<T> xL, nL;
  std::vector<T> rL;
};

std::uint64_t forward_calls() { return g_forward_calls; }

namespace {

template <typename T>
const LoraPair<T>* lora_of(const ForwardPass<T>& p, std::size_t l, std::size_t proj) {
  if (!p.lora) return nullptr;
  const auto& lp = p.lora->blocks[l][proj];
  return lp.active() ? &lp : nullptr;
}

template <typename T>
void block_forward(const BackboneConfig& cfg, const ForwardPass<T>& p, std::size_t l,
                   const Tensor<T>& x_in, BlockCache<T>& c, Tensor<T>& x_out) {
  const auto& blk = p.w->blocks[l];
  const std::size_t d = cfg.width, H = cfg.heads, dh = d / H, R = p.R, N = p.N, nt = p.nt;
  const std::size_t dff = cfg.ffn_width;
  const T s = p.lora_scale;
  const T* mod = c.mod.data();
  const T *sh1 = mod, *sc1 = mod + d, *g1 = mod + 2 * d, *sh2 = mod + 3 * d, *sc2 = mod + 4 * d,
          *g2 = mod + 5 * d;

  // Self-attention.
  rms_fwd(x_in, c.n1, c.r1);
  ensure(c.a1, {R, d});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < d; ++j)
      c.a1.ptr()[i * d + j] = c.n1.ptr()[i * d + j] * (T(1) + sc1[j]) + sh1[j];
  ensure(c.q, {R, d});
  ensure(c.k, {R, d});
  ensure(c.v, {R, d});
  lin_fwd(blk.proj[kSaQ], lora_of(p, l, kSaQ), s, c.a1.ptr(), R, c.q.ptr(), &c.u[kSaQ]);
  lin_fwd(blk.proj[kSaK], lora_of(p, l, kSaK), s, c.a1.ptr(), R, c.k.ptr(), &c.u[kSaK]);
  lin_fwd(blk.proj[kSaV], lora_of(p, l, kSaV), s, c.a1.ptr(), R, c.v.ptr(), &c.u[kSaV]);
  ensure(c.pq, {R, d});
  ensure(c.pk, {R, d});
  for (std::size_t i = 0; i < R * d; ++i) {
    c.pq[i] = std::max(c.q[i], T(0));
    c.pk[i] = std::max(c.k[i], T(0));
  }
  ensure(c.att, {R, d});
  if (cfg.attention == AttentionKind::linear) {
    ensure(c.kv, p.B * H * dh * dh);
    ensure(c.ksum, p.B * H * dh);
    ensure(c.den, p.B * H * N);
    for (std::size_t b = 0; b < p.B; ++b)
      for (std::size_t hh = 0; hh < H; ++hh) {
        const std::size_t off = b * N * d + hh * dh, bh = b * H + hh;
        kernels::linear_attn_fwd(N, dh, c.pq.ptr() + off, c.pk.ptr() + off, c.v.ptr() + off, d,
                                 p.eps, c.att.ptr() + off, d, c.kv.data() + bh * dh * dh,
                                 c.ksum.data() + bh * dh, c.den.data() + bh * N);
      }
  } else {
    std::vector<T> scratch(N * N);
    for (std::size_t b = 0; b < p.B; ++b)
      for (std::size_t hh = 0; hh < H; ++hh) {
        const std::size_t off = b * N * d + hh * dh;
        kernels::quadratic_attn_fwd(N, dh, c.pq.ptr() + off, c.pk.ptr() + off, c.v.ptr() + off, d,
                                    p.eps, c.att.ptr() + off, d, scratch.data());
      }
  }
  ensure(c.sa, {R, d});
  lin_fwd(blk.proj[kSaO], lora_of(p, l, kSaO), s, c.att.ptr(), R, c.sa.ptr(), &c.u[kSaO]);
  ensure(c.x1, {R, d});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < d; ++j)
      c.x1.ptr()[i * d + j] = x_in.ptr()[i * d + j] + (T(1) + g1[j]) * c.sa.ptr()[i * d + j];

  // Cross-attention to the prompt.
  rms_fwd(c.x1, c.n2, c.r2);
  ensure(c.cq, {R, d});
  ensure(c.ck, {p.B * nt, d});
  ensure(c.cv, {p.B * nt, d});
  lin_fwd(blk.proj[kCaQ], lora_of(p, l, kCaQ), s, c.n2.ptr(), R, c.cq.ptr(), &c.u[kCaQ]);
  lin_fwd(blk.proj[kCaK], lora_of(p, l, kCaK), s, p.text.ptr(), p.B * nt, c.ck.ptr(), &c.u[kCaK]);
  lin_fwd(blk.proj[kCaV], lora_of(p, l, kCaV), s, p.text.ptr(), p.B * nt, c.cv.ptr(), &c.u[kCaV]);
  ensure(c.probs, p.B * H * N * nt);
  ensure(c.catt, {R, d});
  for (std::size_t b = 0; b < p.B; ++b)
    for (std::size_t hh = 0; hh < H; ++hh) {
      const std::size_t qo = b * N * d + hh * dh, ko = b * nt * d + hh * dh;
      kernels::masked_softmax_fwd(N, nt, dh, c.cq.ptr() + qo, d, c.ck.ptr() + ko,
                                  c.cv.ptr() + ko, d, p.mask.data() + b * nt, c.catt.ptr() + qo,
                                  d, c.probs.data() + (b * H + hh) * N * nt);
    }
  ensure(c.ca, {R, d});
  lin_fwd(blk.proj[kCaO], lora_of(p, l, kCaO), s, c.catt.ptr(), R, c.ca.ptr(), &c.u[kCaO]);
  ensure(c.x2, {R, d});
  for (std::size_t i = 0; i < R * d; ++i) c.x2[i] = c.x1[i] + c.ca[i];

  // Feed-forward.
  rms_fwd(c.x2, c.n3, c.r3);
  ensure(c.a3, {R, d});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < d; ++j)
      c.a3.ptr()[i * d + j] = c.n3.ptr()[i * d + j] * (T(1) + sc2[j]) + sh2[j];
  ensure(c.hpre, {R, dff});
  ensure(c.hact, {R, dff});
  lin_fwd(blk.proj[kFfIn], lora_of(p, l, kFfIn), s, c.a3.ptr(), R, c.hpre.ptr(), &c.u[kFfIn]);
  for (std::size_t i = 0; i < R * dff; ++i) c.hact[i] = silu(c.hpre[i]);
  ensure(c.ffo, {R, d});
  lin_fwd(blk.proj[kFfOut], lora_of(p, l, kFfOut), s, c.hact.ptr(), R, c.ffo.ptr(), &c.u[kFfOut]);
  ensure(x_out, {R, d});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x_out.ptr()[i * d + j] = c.x2.ptr()[i * d + j] + (T(1) + g2[j]) * c.ffo.ptr()[i * d + j];
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const BackboneState<T>& state, const Tensor<T>& z, double t,
                         const CondBatch<T>& cond, bool use_adapters, bool record) {
  const auto& cfg = state.cfg;
  if (!state.frozen) throw std::logic_error("forward: backbone state is not initialized");
  if (z.rank() != 4 || z.dim(1) != cfg.latent_channels) {
    throw ShapeError("forward: expected B x " + std::to_string(cfg.latent_channels) +
                     " x h x w latent, got " + shape_str(z.shape()));
  }
  if (!(t >= 0 && t <= static_cast<double>(cfg.sched_T))) {
    throw std::out_of_range("forward: timestep outside [0, T]");
  }
  const std::size_t B = z.dim(0), h = z.dim(2), w = z.dim(3), N = h * w, C = cfg.latent_channels;
  const std::size_t d = cfg.width;
  if (cond.empty() || (cond.size() != 1 && cond.size() != B)) {
    throw ShapeError("forward: need 1 or B prompt conditions");
  }
  const std::size_t nt = cond[0].tokens();
  for (const auto& c : cond) {
    if (c.tokens() != nt || c.c.rank() != 2 || c.c.dim(0) != nt || c.c.dim(1) != cfg.text_width) {
      throw ShapeError("forward: prompt condition must be T_tok x d_t with a matching mask");
    }
    if (c.active() == 0) throw std::invalid_argument("forward: prompt mask is all zero");
  }
  ++g_forward_calls;

  auto pass = std::make_shared<ForwardPass<T>>();
  auto& p = *pass;
  p.cfg = cfg;
  p.adapted = use_adapters;
  p.w = use_adapters ? &state.params : state.frozen.get();
  if (use_adapters && state.lora) {
    p.lora = &*state.lora;
    p.lora_scale = static_cast<T>(state.lora->cfg.scale());
  }
  p.B = B, p.h = h, p.wd = w, p.N = N, p.R = B * N, p.nt = nt;
  p.eps = static_cast<T>(state.eps_att());
  const std::size_t R = p.R;

  p.tokens = Tensor<T>({R, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t i = 0; i < N; ++i) p.tokens[(b * N + i) * C + ch] = z[(b * C + ch) * N + i];
  p.text = Tensor<T>({B * nt, cfg.text_width});
  p.mask.resize(B * nt);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& c = cond[cond.size() == 1 ? 0 : b];
    std::copy(c.c.data().begin(), c.c.data().end(), p.text.ptr() + b * nt * cfg.text_width);
    std::copy(c.m.begin(), c.m.end(), p.mask.begin() + b * nt);
  }

  Tensor<T> x({R, d});
  lin_fwd(p.w->patch_in, static_cast<const LoraPair<T>*>(nullptr), T(0), p.tokens.ptr(), R, x.ptr(),
          static_cast<Tensor<T>*>(nullptr));
  const Tensor<T> pos = position_table<T>(h, w, d, cfg.pos_scale);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < N * d; ++i) x[b * N * d + i] += pos[i];

  const std::size_t L = p.w->blocks.size();
  if (L > 0) {
    p.temb = timestep_embedding<T>(t, d);
    p.t1pre.assign(d, T(0));
    lin_fwd(p.w->t_fc1, static_cast<const LoraPair<T>*>(nullptr), T(0), p.temb.data(), 1,
            p.t1pre.data(), static_cast<Tensor<T>*>(nullptr));
    p.t1act.resize(d);
    for (std::size_t j = 0; j < d; ++j) p.t1act[j] = silu(p.t1pre[j]);
    p.e.assign(d, T(0));
    lin_fwd(p.w->t_fc2, static_cast<const LoraPair<T>*>(nullptr), T(0), p.t1act.data(), 1,
            p.e.data(), static_cast<Tensor<T>*>(nullptr));
    p.se.resize(d);
    for (std::size_t j = 0; j < d; ++j) p.se[j] = silu(p.e[j]);
  }

  p.blocks.resize(record ? L : std::min<std::size_t>(L, 1));
  Tensor<T> next;
  for (std::size_t l = 0; l < L; ++l) {
    BlockCache<T>& c = p.blocks[record ? l : 0];
    c.mod.assign(6 * d, T(0));
    lin_fwd(p.w->blocks[l].proj[kMod], static_cast<const LoraPair<T>*>(nullptr), T(0), p.se.data(),
            1, c.mod.data(), static_cast<Tensor<T>*>(nullptr));
    if (record) c.x_in = x;
    block_forward(cfg, p, l, x, c, next);
    std::swap(x, next);
  }

  rms_fwd(x, p.nL, p.rL);
  if (record) p.xL = x;
  Tensor<T> out_tok({R, C});
  lin_fwd(p.w->patch_out, static_cast<const LoraPair<T>*>(nullptr), T(0), p.nL.ptr(), R,
          out_tok.ptr(), static_cast<Tensor<T>*>(nullptr));
  Tensor<T> out({B, C, h, w});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t i = 0; i < N; ++i) out[(b * C + ch) * N + i] = out_tok[(b * N + i) * C + ch];
  check_finite(out, "backbone forward");
  if (!record) pass.reset();
  return {std::move(out), std::move(pass)};
}

template <typename T>
BackboneGrads<T> backward(const ForwardResult<T>& fwd, const Tensor<T>& grad_out,
                          const BackwardRequest& req) {
  if (!fwd.pass) throw std::logic_error("backward: no cached forward pass (record=false?)");
  const ForwardPass<T>& p = *fwd.pass;
  if (!p.adapted && (req.params || req.lora)) {
    throw std::logic_error("backward: the frozen prior f_0 never receives parameter gradients");
  }
  if (req.lora && !p.lora) throw std::logic_error("backward: LoRA gradients requested without adapters");
  require_same_shape(grad_out.shape(), fwd.out.shape(), "backward");

  const auto& W = *p.w;
  const std::size_t L = W.blocks.size();
  const std::size_t d = W.patch_in.out(), C = W.patch_in.in(), R = p.R, N = p.N, B = p.B;
  if (p.cfg.attention != AttentionKind::linear) {
    throw std::logic_error("backward: only the linear attention path is differentiable");
  }
  const std::size_t Hh = p.cfg.heads, dh = d / Hh;
  const T s = p.lora_scale;

  BackboneGrads<T> g;
  if (req.params) g.params = W.zeros_like();
  if (req.lora) g.lora = p.lora->zeros_like();
  Linear<T>* gnull = nullptr;

  Tensor<T> dtok({R, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t i = 0; i < N; ++i) dtok[(b * N + i) * C + ch] = grad_out[(b * C + ch) * N + i];

  Tensor<T> dn({R, d});
  lin_bwd(W.patch_out, static_cast<const LoraPair<T>*>(nullptr), T(0), p.nL.ptr(), R, dtok.ptr(),
          static_cast<const Tensor<T>*>(nullptr), dn.ptr(),
          req.params ? &g.params->patch_out : gnull, static_cast<LoraPair<T>*>(nullptr));
  Tensor<T> dx({R, d});
  rms_bwd(p.nL, p.rL, dn.ptr(), dx.ptr());

  std::vector<T> dse(d, T(0));
  for (std::size_t l = L; l-- > 0;) {
    const BlockCache<T>& c = p.blocks[l];
    const auto& blk = W.blocks[l];
    const std::size_t dff = blk.proj[kFfIn].out(), nt = p.nt;
    auto* gb = req.params ? &g.params->blocks[l] : nullptr;
    auto gl = [&](std::size_t proj) -> LoraPair<T>* {
      if (!req.lora) return nullptr;
      auto& lp = g.lora->blocks[l][proj];
      return lp.active() ? &lp : nullptr;
    };
    auto gp = [&](std::size_t proj) { return gb ? &gb->proj[proj] : gnull; };
    const T* mod = c.mod.data();
    const T *sc1 = mod + d, *g1 = mod + 2 * d, *sc2 = mod + 4 * d, *g2 = mod + 5 * d;
    std::vector<T> dmod(6 * d, T(0));
    T *dsh1 = dmod.data(), *dsc1 = dmod.data() + d, *dg1 = dmod.data() + 2 * d;
    T *dsh2 = dmod.data() + 3 * d, *dsc2 = dmod.data() + 4 * d, *dg2 = dmod.data() + 5 * d;

    // Feed-forward.
    Tensor<T> dffo({R, d});
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const T gx = dx.ptr()[i * d + j];
        dffo.ptr()[i * d + j] = gx * (T(1) + g2[j]);
        dg2[j] += gx * c.ffo.ptr()[i * d + j];
      }
    Tensor<T> dh_act({R, dff});
    lin_bwd(blk.proj[kFfOut], lora_of(p, l, kFfOut), s, c.hact.ptr(), R, dffo.ptr(), &c.u[kFfOut],
            dh_act.ptr(), gp(kFfOut), gl(kFfOut));
    for (std::size_t i = 0; i < R * dff; ++i) dh_act[i] *= silu_grad(c.hpre[i]);
    Tensor<T> da3({R, d});
    lin_bwd(blk.proj[kFfIn], lora_of(p, l, kFfIn), s, c.a3.ptr(), R, dh_act.ptr(), &c.u[kFfIn],
            da3.ptr(), gp(kFfIn), gl(kFfIn));
    Tensor<T> dn3({R, d});
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const T ga = da3.ptr()[i * d + j];
        dn3.ptr()[i * d + j] = ga * (T(1) + sc2[j]);
        dsc2[j] += ga * c.n3.ptr()[i * d + j];
        dsh2[j] += ga;
      }
    rms_bwd(c.n3, c.r3, dn3.ptr(), dx.ptr());  // dx now holds d x2

    // Cross-attention.
    Tensor<T> dcatt({R, d});
    lin_bwd(blk.proj[kCaO], lora_of(p, l, kCaO), s, c.catt.ptr(), R, dx.ptr(), &c.u[kCaO],
            dcatt.ptr(), gp(kCaO), gl(kCaO));
    Tensor<T> dcq({R, d}), dck({B * nt, d}), dcv({B * nt, d});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t hh = 0; hh < Hh; ++hh) {
        const std::size_t qo = b * N * d + hh * dh, ko = b * nt * d + hh * dh;
        kernels::masked_softmax_bwd(N, nt, dh, c.cq.ptr() + qo, d, c.ck.ptr() + ko,
                                    c.cv.ptr() + ko, d, c.probs.data() + (b * Hh + hh) * N * nt,
                                    dcatt.ptr() + qo, d, dcq.ptr() + qo, dck.ptr() + ko,
                                    dcv.ptr() + ko);
      }
    lin_bwd(blk.proj[kCaK], lora_of(p, l, kCaK), s, p.text.ptr(), B * nt, dck.ptr(), &c.u[kCaK],
            static_cast<T*>(nullptr), gp(kCaK), gl(kCaK));
    lin_bwd(blk.proj[kCaV], lora_of(p, l, kCaV), s, p.text.ptr(), B * nt, dcv.ptr(), &c.u[kCaV],
            static_cast<T*>(nullptr), gp(kCaV), gl(kCaV));
    Tensor<T> dn2({R, d});
    lin_bwd(blk.proj[kCaQ], lora_of(p, l, kCaQ), s, c.n2.ptr(), R, dcq.ptr(), &c.u[kCaQ],
            dn2.ptr(), gp(kCaQ), gl(kCaQ));
    rms_bwd(c.n2, c.r2, dn2.ptr(), dx.ptr());  // dx now holds d x1

    // Self-attention.
    Tensor<T> dsa({R, d});
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const T gx = dx.ptr()[i * d + j];
        dsa.ptr()[i * d + j] = gx * (T(1) + g1[j]);
        dg1[j] += gx * c.sa.ptr()[i * d + j];
      }
    Tensor<T> datt({R, d});
    lin_bwd(blk.proj[kSaO], lora_of(p, l, kSaO), s, c.att.ptr(), R, dsa.ptr(), &c.u[kSaO],
            datt.ptr(), gp(kSaO), gl(kSaO));
    Tensor<T> dq({R, d}), dk({R, d}), dv({R, d});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t hh = 0; hh < Hh; ++hh) {
        const std::size_t off = b * N * d + hh * dh, bh = b * Hh + hh;
        kernels::linear_attn_bwd(N, dh, c.pq.ptr() + off, c.pk.ptr() + off, c.v.ptr() + off, d,
                                 c.kv.data() + bh * dh * dh, c.ksum.data() + bh * dh,
                                 c.den.data() + bh * N, c.att.ptr() + off, datt.ptr() + off, d,
                                 dq.ptr() + off, dk.ptr() + off, dv.ptr() + off);
      }
    for (std::size_t i = 0; i < R * d; ++i) {
      if (c.q[i] <= T(0)) dq[i] = T(0);
      if (c.k[i] <= T(0)) dk[i] = T(0);
    }
    Tensor<T> da1({R, d});
    lin_bwd(blk.proj[kSaQ], lora_of(p, l, kSaQ), s, c.a1.ptr(), R, dq.ptr(), &c.u[kSaQ],
            da1.ptr(), gp(kSaQ), gl(kSaQ));
    lin_bwd(blk.proj[kSaK], lora_of(p, l, kSaK), s, c.a1.ptr(), R, dk.ptr(), &c.u[kSaK],
            da1.ptr(), gp(kSaK), gl(kSaK));
    lin_bwd(blk.proj[kSaV], lora_of(p, l, kSaV), s, c.a1.ptr(), R, dv.ptr(), &c.u[kSaV],
            da1.ptr(), gp(kSaV), gl(kSaV));
    Tensor<T> dn1({R, d});
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const T ga = da1.ptr()[i * d + j];
        dn1.ptr()[i * d + j] = ga * (T(1) + sc1[j]);
        dsc1[j] += ga * c.n1.ptr()[i * d + j];
        dsh1[j] += ga;
      }
    rms_bwd(c.n1, c.r1, dn1.ptr(), dx.ptr());  // dx now holds d x_in

    if (req.params) {
      lin_bwd(blk.proj[kMod], static_cast<const LoraPair<T>*>(nullptr), T(0), p.se.data(), 1,
              dmod.data(), static_cast<const Tensor<T>*>(nullptr), dse.data(), gp(kMod),
              static_cast<LoraPair<T>*>(nullptr));
    }
  }

  if (req.params && L > 0) {
    std::vector<T> de(d), dt1(d, T(0));
    for (std::size_t j = 0; j < d; ++j) de[j] = dse[j] * silu_grad(p.e[j]);
    lin_bwd(W.t_fc2, static_cast<const LoraPair<T>*>(nullptr), T(0), p.t1act.data(), 1, de.data(),
            static_cast<const Tensor<T>*>(nullptr), dt1.data(), &g.params->t_fc2,
            static_cast<LoraPair<T>*>(nullptr));
    for (std::size_t j = 0; j < d; ++j) dt1[j] *= silu_grad(p.t1pre[j]);
    lin_bwd(W.t_fc1, static_cast<const LoraPair<T>*>(nullptr), T(0), p.temb.data(), 1, dt1.data(),
            static_cast<const Tensor<T>*>(nullptr), static_cast<T*>(nullptr), &g.params->t_fc1,
            static_cast<LoraPair<T>*>(nullptr));
  }

  if (req.params || req.input) {
    Tensor<T> dtokens({R, C});
    lin_bwd(W.patch_in, static_cast<const LoraPair<T>*>(nullptr), T(0), p.tokens.ptr(), R, dx.ptr(),
            static_cast<const Tensor<T>*>(nullptr), req.input ? dtokens.ptr() : static_cast<T*>(nullptr),
            req.params ? &g.params->patch_in : gnull, static_cast<LoraPair<T>*>(nullptr));
    if (req.input) {
      Tensor<T> gin(fwd.out.shape());
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t ch = 0; ch < C; ++ch)
          for (std::size_t i = 0; i < N; ++i) gin[(b * C + ch) * N + i] = dtokens[(b * N + i) * C + ch];
      g.input = std::move(gin);
    }
  }
  return g;
}

template <typename T>
Tensor<T> one_step_restore(const BackboneState<T>& state, const Tensor<T>& z_l, double tau_g,
                           const CondBatch<T>& cond) {
  const auto f = forward(state, z_l, tau_g, cond, true, false);
  const T sg = static_cast<T>(sigma(tau_g, static_cast<double>(state.cfg.sched_T)));
  Tensor<T> out = z_l;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= sg * f.out[i];
  return out;
}

template <typename T>
void lora_inject(BackboneState<T>& state, const LoraConfig& cfg) {
  if (state.lora) throw std::logic_error("lora_inject: adapters already present");
  if (cfg.rank == 0) throw std::invalid_argument("lora_inject: rank must be >= 1");
  LoraSet<T> set;
  set.cfg = cfg;
  Rng rng(cfg.seed);
  set.blocks.resize(state.params.blocks.size());
  for (std::size_t l = 0; l < set.blocks.size(); ++l)
    for (std::size_t p = 0; p < kNumBlockProj; ++p) {
      if (!cfg.targets(p)) continue;
      const auto& lin = state.params.blocks[l].proj[p];
      set.blocks[l][p].a = gaussian_fill<T>(rng, {cfg.rank, lin.in()},
                                            1.0 / std::sqrt(static_cast<double>(cfg.rank)));
      set.blocks[l][p].b = Tensor<T>({lin.out(), cfg.rank});
    }
  state.lora = std::move(set);
}

template <typename T>
void lora_merge(BackboneState<T>& state) {
  if (!state.lora) throw std::logic_error("lora_merge: no adapters to merge");
  const T s = static_cast<T>(state.lora->cfg.scale());
  for (std::size_t l = 0; l < state.params.blocks.size(); ++l)
    for (std::size_t p = 0; p < kNumBlockProj; ++p) {
      const auto& lp = state.lora->blocks[l][p];
      if (!lp.active()) continue;
      auto& w = state.params.blocks[l].proj[p].w;
      const Tensor<T> ba = matmul(lp.b, lp.a);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += s * ba[i];
    }
  state.lora.reset();
}

template <typename T>
BackboneState<T> remove_blocks(const BackboneState<T>& state, const std::vector<std::size_t>& keep) {
  const std::size_t L = state.params.blocks.size();
  if (keep.empty() || keep.front() != 0 || keep.back() != L - 1) {
    throw std::invalid_argument("remove_blocks: the first and last blocks must be kept");
  }
  for (std::size_t i = 1; i < keep.size(); ++i)
    if (keep[i] <= keep[i - 1]) throw std::invalid_argument("remove_blocks: keep must be ascending");
  if (keep.back() >= L) throw std::invalid_argument("remove_blocks: index out of range");

  BackboneState<T> out;
  out.cfg = state.cfg;
  out.cfg.blocks = keep.size();
  auto select = [&](const BackboneWeights<T>& w) {
    BackboneWeights<T> r;
    r.patch_in = w.patch_in, r.t_fc1 = w.t_fc1, r.t_fc2 = w.t_fc2, r.patch_out = w.patch_out;
    for (auto k : keep) r.blocks.push_back(w.blocks[k]);
    return r;
  };
  out.params = select(state.params);
  out.frozen = std::make_shared<const BackboneWeights<T>>(select(*state.frozen));
  if (state.lora) {
    LoraSet<T> set;
    set.cfg = state.lora->cfg;
    for (auto k : keep) set.blocks.push_back(state.lora->blocks[k]);
    out.lora = std::move(set);
  }
  return out;
}

#define LDSR_BACKBONE_INST(T)                                                                     \
  template struct BlockWeights<T>;                                                                \
  template struct BackboneWeights<T>;                                                             \
  template struct LoraSet<T>;                                                                     \
  template struct BackboneState<T>;                                                               \
  template ForwardResult<T> forward(const BackboneState<T>&, const Tensor<T>&, double,            \
                                    const CondBatch<T>&, bool, bool);                             \
  template BackboneGrads<T> backward(const ForwardResult<T>&, const Tensor<T>&,                   \
                                     const BackwardRequest&);                                     \
  template Tensor<T> one_step_restore(const BackboneState<T>&, const Tensor<T>&, double,          \
                                      const CondBatch<T>&);                                       \
  template void lora_inject(BackboneState<T>&, const LoraConfig&);                                \
  template void lora_merge(BackboneState<T>&);                                                    \
  template BackboneState<T> remove_blocks(const BackboneState<T>&,                                \
                                          const std::vector<std::size_t>&);                       \
  template Tensor<T> position_table<T>(std::size_t, std::size_t, std::size_t, double);            \
  template std::vector<T> timestep_embedding<T>(double, std::size_t);

LDSR_BACKBONE_INST(float)
LDSR_BACKBONE_INST(double)

}  // namespace ldsr
