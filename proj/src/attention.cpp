#include "ldsr/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ldsr {
namespace kernels {

template <typename T>
void linear_attn_fwd(std::size_t n, std::size_t dh, const T* phi_q, const T* phi_k, const T* v,
                     std::size_t ld, T eps, T* out, std::size_t ldo, T* kv, T* ksum, T* den) {
  gemm_tn(dh, dh, n, phi_k, ld, v, ld, kv, dh, false);
  std::fill(ksum, ksum + dh, T(0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < dh; ++c) ksum[c] += phi_k[j * ld + c];
  gemm_nn(n, dh, dh, phi_q, ld, kv, dh, out, ldo, false);
  for (std::size_t i = 0; i < n; ++i) {
    T s = T(0);
    for (std::size_t c = 0; c < dh; ++c) s += phi_q[i * ld + c] * ksum[c];
    den[i] = s + eps;
    const T inv = T(1) / den[i];
    for (std::size_t c = 0; c < dh; ++c) out[i * ldo + c] *= inv;
  }
  add_macs(static_cast<std::uint64_t>(n) * dh);
}

template <typename T>
void linear_attn_bwd(std::size_t n, std::size_t dh, const T* phi_q, const T* phi_k, const T* v,
                     std::size_t ld, const T* kv, const T* ksum, const T* den, const T* out,
                     const T* dout, std::size_t ldo, T* dphi_q, T* dphi_k, T* dv) {
  std::vector<T> dnum(n * dh), dden(n), dkv(dh * dh), dksum(dh, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    T s = T(0);
    for (std::size_t c = 0; c < dh; ++c) {
      dnum[i * dh + c] = dout[i * ldo + c] / den[i];
      s += dout[i * ldo + c] * out[i * ldo + c];
    }
    dden[i] = -s / den[i];
  }
  gemm_nt(n, dh, dh, dnum.data(), dh, kv, dh, dphi_q, ld, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dh; ++c) dphi_q[i * ld + c] += dden[i] * ksum[c];

  gemm_tn(dh, dh, n, phi_q, ld, dnum.data(), dh, dkv.data(), dh, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dh; ++c) dksum[c] += phi_q[i * ld + c] * dden[i];

  gemm_nt(n, dh, dh, v, ld, dkv.data(), dh, dphi_k, ld, false);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < dh; ++c) dphi_k[j * ld + c] += dksum[c];
  gemm_nn(n, dh, dh, phi_k, ld, dkv.data(), dh, dv, ld, false);
}

template <typename T>
void quadratic_attn_fwd(std::size_t n, std::size_t dh, const T* phi_q, const T* phi_k, const T* v,
                        std::size_t ld, T eps, T* out, std::size_t ldo, T* scratch) {
  gemm_nt(n, n, dh, phi_q, ld, phi_k, ld, scratch, n, false);
  for (std::size_t i = 0; i < n; ++i) {
    T* row = scratch + i * n;
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) s += row[j];
    const T inv = T(1) / (s + eps);
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
  gemm_nn(n, dh, n, scratch, n, v, ld, out, ldo, false);
}

template <typename T>
void masked_softmax_fwd(std::size_t n, std::size_t nt, std::size_t dh, const T* q, std::size_t ldq,
                        const T* k, const T* v, std::size_t ldk, const std::uint8_t* mask,
                        T* out, std::size_t ldo, T* probs) {
  if (std::none_of(mask, mask + nt, [](std::uint8_t m) { return m != 0; })) {
    throw std::invalid_argument("masked_softmax_attention: every text token is masked");
  }
  gemm_nt(n, nt, dh, q, ldq, k, ldk, probs, nt, false);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t i = 0; i < n; ++i) {
    T* row = probs + i * nt;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < nt; ++j)
      if (mask[j]) mx = std::max(mx, row[j] * scale);
    T s = T(0);
    for (std::size_t j = 0; j < nt; ++j) {
      row[j] = mask[j] ? std::exp(row[j] * scale - mx) : T(0);
      s += row[j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < nt; ++j) row[j] *= inv;
  }
  gemm_nn(n, dh, nt, probs, nt, v, ldk, out, ldo, false);
}

template <typename T>
void masked_softmax_bwd(std::size_t n, std::size_t nt, std::size_t dh, const T* q, std::size_t ldq,
                        const T* k, const T* v, std::size_t ldk, const T* probs, const T* dout,
                        std::size_t ldo, T* dq, T* dk, T* dv) {
  std::vector<T> dl(n * nt);
  gemm_nt(n, nt, dh, dout, ldo, v, ldk, dl.data(), nt, false);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t i = 0; i < n; ++i) {
    const T* p = probs + i * nt;
    T* g = dl.data() + i * nt;
    T s = T(0);
    for (std::size_t j = 0; j < nt; ++j) s += g[j] * p[j];
    for (std::size_t j = 0; j < nt; ++j) g[j] = p[j] * (g[j] - s) * scale;
  }
  gemm_nn(n, dh, nt, dl.data(), nt, k, ldk, dq, ldq, false);
  gemm_tn(nt, dh, n, dl.data(), nt, q, ldq, dk, ldk, false);
  gemm_tn(nt, dh, n, probs, nt, dout, ldo, dv, ldk, false);
}

}  // namespace kernels

namespace {
template <typename T>
void check_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const char* where) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(0) == 0 ||
      q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError(std::string(where) + ": Q, K, V must share an N x d_h shape");
  }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& e : out.data()) e = std::max(e, T(0));
  return out;
}
}  // namespace

template <typename T>
Tensor<T> linear_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, double eps) {
  check_qkv(q, k, v, "linear_attention");
  if (!(eps > 0)) throw std::invalid_argument("linear_attention: eps must be > 0");
  const std::size_t n = q.dim(0), dh = q.dim(1);
  Tensor<T> pq = relu(q), pk = relu(k), out({n, dh});
  std::vector<T> kv(dh * dh), ksum(dh), den(n);
  kernels::linear_attn_fwd(n, dh, pq.ptr(), pk.ptr(), v.ptr(), dh, static_cast<T>(eps), out.ptr(),
                           dh, kv.data(), ksum.data(), den.data());
  check_finite(out, "linear_attention");
  return out;
}

template <typename T>
Tensor<T> quadratic_reference_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        double eps) {
  check_qkv(q, k, v, "quadratic_reference_attention");
  const std::size_t n = q.dim(0), dh = q.dim(1);
  Tensor<T> pq = relu(q), pk = relu(k), out({n, dh});
  std::vector<T> scratch(n * n);
  kernels::quadratic_attn_fwd(n, dh, pq.ptr(), pk.ptr(), v.ptr(), dh, static_cast<T>(eps),
                              out.ptr(), dh, scratch.data());
  return out;
}

template <typename T>
Tensor<T> masked_softmax_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                   const std::vector<std::uint8_t>& mask) {
  if (q.rank() != 2 || k.rank() != 2 || k.shape() != v.shape() || q.dim(1) != k.dim(1) ||
      mask.size() != k.dim(0)) {
    throw ShapeError("masked_softmax_attention: expected q N x d, k/v T x d, mask T");
  }
  const std::size_t n = q.dim(0), nt = k.dim(0), dh = q.dim(1);
  Tensor<T> out({n, dh});
  std::vector<T> probs(n * nt);
  kernels::masked_softmax_fwd(n, nt, dh, q.ptr(), dh, k.ptr(), v.ptr(), dh, mask.data(), out.ptr(),
                              dh, probs.data());
  return out;
}

#define LDSR_ATTN_INST(T)                                                                         \
  template void kernels::linear_attn_fwd<T>(std::size_t, std::size_t, const T*, const T*,         \
                                            const T*, std::size_t, T, T*, std::size_t, T*, T*,    \
                                            T*);                                                  \
  template void kernels::linear_attn_bwd<T>(std::size_t, std::size_t, const T*, const T*,         \
                                            const T*, std::size_t, const T*, const T*, const T*,  \
                                            const T*, const T*, std::size_t, T*, T*, T*);         \
  template void kernels::quadratic_attn_fwd<T>(std::size_t, std::size_t, const T*, const T*,      \
                                               const T*, std::size_t, T, T*, std::size_t, T*);    \
  template void kernels::masked_softmax_fwd<T>(std::size_t, std::size_t, std::size_t, const T*,   \
                                               std::size_t, const T*, const T*, std::size_t,      \
                                               const std::uint8_t*, T*, std::size_t, T*);         \
  template void kernels::masked_softmax_bwd<T>(std::size_t, std::size_t, std::size_t, const T*,   \
                                               std::size_t, const T*, const T*, std::size_t,      \
                                               const T*, const T*, std::size_t, T*, T*, T*);      \
  template Tensor<T> linear_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                      double);                                                    \
  template Tensor<T> quadratic_reference_attention(const Tensor<T>&, const Tensor<T>&,            \
                                                   const Tensor<T>&, double);                     \
  template Tensor<T> masked_softmax_attention(const Tensor<T>&, const Tensor<T>&,                 \
                                              const Tensor<T>&, const std::vector<std::uint8_t>&);

LDSR_ATTN_INST(float)
LDSR_ATTN_INST(double)

}  // namespace ldsr
