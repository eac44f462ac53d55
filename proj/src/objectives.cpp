#include "ldsr/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <vector>
#include <stdexcept>

#include "ldsr/rng.hpp"

namespace ldsr {

void LossWeights::validate() const {
  if (lambda2 < 0 || lambda_p < 0 || lambda_a < 0 || lambda_c < 0) {
    throw std::invalid_argument("LossWeights: weights must be nonnegative");
  }
}

namespace {

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}


// 3x3, stride 2, zero padding 1, as im2col + GEMM. Column row index is
// (c * 3 + ky) * 3 + kx, matching the out x in x 3 x 3 weight layout.
template <typename T>
void im2col(const T* x, std::size_t ci, std::size_t H, std::size_t W, std::size_t Ho,
            std::size_t Wo, T* col) {
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = col + ((c * 3 + ky) * 3 + kx) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
            const bool in = iy >= 0 && iy < static_cast<std::ptrdiff_t>(H) && ix >= 0 &&
                            ix < static_cast<std::ptrdiff_t>(W);
            row[oy * Wo + ox] = in ? x[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, std::size_t ci, std::size_t H, std::size_t W, std::size_t Ho,
                std::size_t Wo, T* x) {
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = col + ((c * 3 + ky) * 3 + kx) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            x[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] += row[oy * Wo + ox];
          }
        }
      }
}

std::size_t conv_out(std::size_t n) { return (n - 1) / 2 + 1; }

constexpr double kEpsNorm = 1e-10;

template <typename T>
Tensor<T> conv_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  const std::size_t B = x.dim(0), ci = x.dim(1), H = x.dim(2), W = x.dim(3), co = w.dim(0);
  const std::size_t Ho = conv_out(H), Wo = conv_out(W), n = Ho * Wo, k = ci * 9;
  Tensor<T> y({B, co, Ho, Wo});
  std::vector<T> col(k * n);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(x.ptr() + b * ci * H * W, ci, H, W, Ho, Wo, col.data());
    T* yb = y.ptr() + b * co * n;
    for (std::size_t o = 0; o < co; ++o) std::fill_n(yb + o * n, n, bias[o]);
    gemm_nn(co, n, k, w.ptr(), k, col.data(), n, yb, n, true);
  }
  return y;
}

// Input gradient of conv_fwd.
template <typename T>
Tensor<T> conv_bwd_input(const Tensor<T>& dy, const Tensor<T>& w, const Shape& x_shape) {
  const std::size_t B = x_shape[0], ci = x_shape[1], H = x_shape[2], W = x_shape[3];
  const std::size_t co = w.dim(0), Ho = dy.dim(2), Wo = dy.dim(3), n = Ho * Wo, k = ci * 9;
  Tensor<T> dx(x_shape);
  std::vector<T> col(k * n);
  for (std::size_t b = 0; b < B; ++b) {
    gemm_tn(k, n, co, w.ptr(), k, dy.ptr() + b * co * n, n, col.data(), n, false);
    col2im_add(col.data(), ci, H, W, Ho, Wo, dx.ptr() + b * ci * H * W);
  }
  return dx;
}

template <typename T>
double mean_sq_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

// Unit-normalizes each pixel's channel vector. `norm` receives the L2 norms.
template <typename T>
Tensor<T> normalize_channels(const Tensor<T>& f, std::vector<double>* norm) {
  const std::size_t B = f.dim(0), C = f.dim(1), n = f.dim(2) * f.dim(3);
  Tensor<T> out(f.shape());
  if (norm) norm->assign(B * n, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double v = f[(b * C + c) * n + i];
        r += v * v;
      }
      r = std::sqrt(r);
      if (norm) (*norm)[b * n + i] = r;
      const double inv = 1.0 / (r + kEpsNorm);
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t k = (b * C + c) * n + i;
        out[k] = static_cast<T>(f[k] * inv);
      }
    }
  return out;
}

// Gradient through normalize_channels, given d/dn.
template <typename T>
Tensor<T> normalize_channels_backward(const Tensor<T>& f, const std::vector<double>& norm,
                                      const Tensor<T>& gn) {
  const std::size_t B = f.dim(0), C = f.dim(1), n = f.dim(2) * f.dim(3);
  Tensor<T> gf(f.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      const double r = norm[b * n + i], u = r + kEpsNorm;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t k = (b * C + c) * n + i;
        dot += static_cast<double>(f[k]) * gn[k];
      }
      const double k2 = r > 0.0 ? dot / (r * u * u) : 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t k = (b * C + c) * n + i;
        gf[k] = static_cast<T>(gn[k] / u - f[k] * k2);
      }
    }
  return gf;
}

// Squared channel distance summed over channels, averaged over batch and pixels.
template <typename T>
double pixel_sq_dist(const Tensor<T>& a, const Tensor<T>& b) {
  return mean_sq_diff(a, b) * static_cast<double>(a.dim(1));
}

template <typename T>
void check_image_pair(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  require_same_shape(a.shape(), b.shape(), where);
  if (a.rank() != 4 || a.dim(1) != 3) throw ShapeError(std::string(where) + ": expected Bx3xHxW");
}

}  // namespace

template <typename T>
PerceptualNet<T>::PerceptualNet(std::uint64_t seed) {
  Rng rng(seed);
  auto layers = std::make_shared<std::array<Layer, 3>>();
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t ci = kChannels[l], co = kChannels[l + 1];
    (*layers)[l].w = gaussian_fill<T>(rng, {co, ci, 3, 3}, std::sqrt(2.0 / (9.0 * ci)));
    (*layers)[l].b = gaussian_fill<T>(rng, {co}, 0.1);
  }
  layers_ = std::move(layers);
}

template <typename T>
std::array<Tensor<T>, 3> PerceptualNet<T>::features(const Tensor<T>& x,
                                                    std::array<Tensor<T>, 3>* pre) const {
  std::array<Tensor<T>, 3> f;
  const Tensor<T>* in = &x;
  for (std::size_t l = 0; l < 3; ++l) {
    Tensor<T> p = conv_fwd(*in, (*layers_)[l].w, (*layers_)[l].b);
    f[l] = p;
    for (auto& e : f[l].data()) e = silu(e);
    if (pre) (*pre)[l] = std::move(p);
    in = &f[l];
  }
  return f;
}

template <typename T>
double PerceptualNet<T>::distance(const Tensor<T>& a, const Tensor<T>& b) const {
  check_image_pair(a, b, "perceptual_distance");
  const auto fa = features(a, nullptr), fb = features(b, nullptr);
  double d = 0.0;
  for (std::size_t l = 0; l < 3; ++l)
    d += pixel_sq_dist(normalize_channels(fa[l], nullptr), normalize_channels(fb[l], nullptr));
  return d / 3.0;
}

template <typename T>
LossGrad<T> PerceptualNet<T>::distance_grad(const Tensor<T>& a, const Tensor<T>& b) const {
  check_image_pair(a, b, "perceptual_distance");
  std::array<Tensor<T>, 3> pre, na, nb;
  std::array<std::vector<double>, 3> norms;
  const auto fa = features(a, &pre);
  const auto fb = features(b, nullptr);
  LossGrad<T> out;
  for (std::size_t l = 0; l < 3; ++l) {
    na[l] = normalize_channels(fa[l], &norms[l]);
    nb[l] = normalize_channels(fb[l], nullptr);
    out.value += pixel_sq_dist(na[l], nb[l]);
  }
  out.value /= 3.0;

  Tensor<T> g;  // gradient w.r.t. the current layer's activation
  for (std::size_t l = 3; l-- > 0;) {
    const double pixels = static_cast<double>(fa[l].size() / fa[l].dim(1));
    const T k = static_cast<T>(2.0 / (3.0 * pixels));
    Tensor<T> gn(na[l].shape());
    for (std::size_t i = 0; i < gn.size(); ++i) gn[i] = k * (na[l][i] - nb[l][i]);
    auto gf = normalize_channels_backward(fa[l], norms[l], gn);
    if (g.empty()) g = std::move(gf);
    else axpy(T(1), gf, g);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= silu_grad(pre[l][i]);
    const Shape in_shape = l ? fa[l - 1].shape() : a.shape();
    g = conv_bwd_input(g, (*layers_)[l].w, in_shape);
  }
  out.grad = std::move(g);
  return out;
}

template <typename T>
double perceptual_distance(const Tensor<T>& a, const Tensor<T>& b, const PerceptualNet<T>& net) {
  return net.distance(a, b);
}

template <typename T>
double rec_loss(const Tensor<T>& x_hat, const Tensor<T>& x_h, const LossWeights& w,
                const PerceptualNet<T>& net) {
  check_image_pair(x_hat, x_h, "rec_loss");
  double v = w.lambda2 * mean_sq_diff(x_hat, x_h);
  if (w.lambda_p != 0.0) v += w.lambda_p * net.distance(x_hat, x_h);
  return v;
}

template <typename T>
LossGrad<T> rec_loss_grad(const Tensor<T>& x_hat, const Tensor<T>& x_h, const LossWeights& w,
                          const PerceptualNet<T>& net) {
  check_image_pair(x_hat, x_h, "rec_loss");
  LossGrad<T> out;
  out.value = w.lambda2 * mean_sq_diff(x_hat, x_h);
  out.grad = Tensor<T>(x_hat.shape());
  const T k = static_cast<T>(2.0 * w.lambda2 / static_cast<double>(x_hat.size()));
  for (std::size_t i = 0; i < x_hat.size(); ++i) out.grad[i] = k * (x_hat[i] - x_h[i]);
  if (w.lambda_p != 0.0) {
    auto p = net.distance_grad(x_hat, x_h);
    out.value += w.lambda_p * p.value;
    axpy(static_cast<T>(w.lambda_p), p.grad, out.grad);
  }
  return out;
}

template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& q, double eps_stat) {
  if (q.rank() != 4 || q.dim(2) * q.dim(3) == 0) throw ShapeError("channel_stats: expected BxCxhxw");
  const std::size_t B = q.dim(0), C = q.dim(1), n = q.dim(2) * q.dim(3);
  ChannelStats<T> st{Tensor<T>({B, C}), Tensor<T>({B, C}), eps_stat};
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* x = q.ptr() + bc * n;
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x[i];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (x[i] - m) * (x[i] - m);
    st.mu[bc] = static_cast<T>(m);
    st.s[bc] = static_cast<T>(v / static_cast<double>(n));
  }
  return st;
}

template <typename T>
double align_loss(const Tensor<T>& q_hat, const Tensor<T>& q_h, double eps_stat) {
  return align_loss_grad(q_hat, q_h, eps_stat).value;
}

template <typename T>
LossGrad<T> align_loss_grad(const Tensor<T>& q_hat, const Tensor<T>& q_h, double eps_stat) {
  require_same_shape(q_hat.shape(), q_h.shape(), "align_loss");
  const auto a = channel_stats(q_hat, eps_stat), h = channel_stats(q_h, eps_stat);
  const std::size_t B = q_hat.dim(0), C = q_hat.dim(1), n = q_hat.dim(2) * q_hat.dim(3);
  const double norm = 1.0 / (2.0 * static_cast<double>(B * C));
  LossGrad<T> out;
  out.grad = Tensor<T>(q_hat.shape());
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double sa = static_cast<double>(a.s[bc]) + eps_stat;
    const double sh = static_cast<double>(h.s[bc]) + eps_stat;
    const double dm = static_cast<double>(a.mu[bc]) - static_cast<double>(h.mu[bc]);
    out.value += std::log(sh / sa) + (sa + dm * dm) / sh - 1.0;
    const double d_s = norm * (-1.0 / sa + 1.0 / sh);
    const double d_mu = norm * 2.0 * dm / sh;
    const T* x = q_hat.ptr() + bc * n;
    T* g = out.grad.ptr() + bc * n;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<T>(d_s * 2.0 * (x[i] - static_cast<double>(a.mu[bc])) * inv_n +
                            d_mu * inv_n);
    }
  }
  out.value *= norm;
  return out;
}

template <typename T>
double cons_loss(const Tensor<T>& q_adapt, const Tensor<T>& q_base) {
  require_same_shape(q_adapt.shape(), q_base.shape(), "cons_loss");
  return mean_sq_diff(q_adapt, q_base);
}

template <typename T>
LossGrad<T> cons_loss_grad(const Tensor<T>& q_adapt, const Tensor<T>& q_base) {
  LossGrad<T> out;
  out.value = cons_loss(q_adapt, q_base);
  out.grad = Tensor<T>(q_adapt.shape());
  const T k = static_cast<T>(2.0 / static_cast<double>(q_adapt.size()));
  for (std::size_t i = 0; i < q_adapt.size(); ++i) out.grad[i] = k * (q_adapt[i] - q_base[i]);
  return out;
}

double total_loss(const LossParts& parts, const LossWeights& w) {
  if (!std::isfinite(parts.rec) || !std::isfinite(parts.align) || !std::isfinite(parts.cons)) {
    throw NonFiniteError("total_loss: non-finite part (rec=" + std::to_string(parts.rec) +
                         ", align=" + std::to_string(parts.align) +
                         ", cons=" + std::to_string(parts.cons) + ")");
  }
  return parts.rec + w.lambda_a * parts.align + w.lambda_c * parts.cons;
}

double calib_loss(const LossParts& parts, const LossWeights& w, double omega_t) {
  if (!(omega_t >= 0.0 && omega_t <= 1.0)) throw std::out_of_range("calib_loss: omega outside [0,1]");
  LossParts p = parts;
  p.cons = 0.0;
  LossWeights wc = w;
  wc.lambda_c = 0.0;
  return omega_t * total_loss(p, wc);
}

#define LDSR_OBJ_INST(T)                                                                          \
  template class PerceptualNet<T>;                                                                \
  template double perceptual_distance(const Tensor<T>&, const Tensor<T>&, const PerceptualNet<T>&); \
  template double rec_loss(const Tensor<T>&, const Tensor<T>&, const LossWeights&,                \
                           const PerceptualNet<T>&);                                              \
  template LossGrad<T> rec_loss_grad(const Tensor<T>&, const Tensor<T>&, const LossWeights&,      \
                                     const PerceptualNet<T>&);                                    \
  template ChannelStats<T> channel_stats(const Tensor<T>&, double);                               \
  template double align_loss(const Tensor<T>&, const Tensor<T>&, double);                         \
  template LossGrad<T> align_loss_grad(const Tensor<T>&, const Tensor<T>&, double);               \
  template double cons_loss(const Tensor<T>&, const Tensor<T>&);                                  \
  template LossGrad<T> cons_loss_grad(const Tensor<T>&, const Tensor<T>&);

LDSR_OBJ_INST(float)
LDSR_OBJ_INST(double)

}  // namespace ldsr
