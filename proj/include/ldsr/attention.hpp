#pragma once

#include <cstdint>
#include <vector>

#include "ldsr/tensor.hpp"

namespace ldsr {

/// Default attention stabilizer for the working precision.
template <typename T>
constexpr double default_eps_att() {
  return sizeof(T) == sizeof(float) ? 1e-6 : 1e-12;
}

/// ReLU-kernel linear attention for one head (Q, K, V are N x d_h):
///   phi(Q) (phi(K)^T V) / (phi(Q) (phi(K)^T 1) + eps)
/// Cost O(N d_h^2); no N x N matrix is formed.
template <typename T>
Tensor<T> linear_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, double eps);

/// Same quantity through the explicit N x N score matrix. Test and benchmark
/// reference only.
template <typename T>
Tensor<T> quadratic_reference_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        double eps);

/// Masked softmax attention of N queries over T text tokens for one head.
/// Rows of k/v at mask==0 never influence the result.
template <typename T>
Tensor<T> masked_softmax_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                   const std::vector<std::uint8_t>& mask);

namespace kernels {

// Strided single-head kernels used by the backbone. All matrices are
// row-major with leading dimension `ld*`; phi_q/phi_k are already ReLU'd.

/// out = num / den; also returns kv (dh x dh), ksum (dh), den (N).
template <typename T>
void linear_attn_fwd(std::size_t n, std::size_t dh, const T* phi_q, const T* phi_k, const T* v,
                     std::size_t ld, T eps, T* out, std::size_t ldo, T* kv, T* ksum, T* den);

/// Gradients w.r.t. phi_q, phi_k and v (overwritten, leading dim `ld`).
template <typename T>
void linear_attn_bwd(std::size_t n, std::size_t dh, const T* phi_q, const T* phi_k, const T* v,
                     std::size_t ld, const T* kv, const T* ksum, const T* den, const T* out,
                     const T* dout, std::size_t ldo, T* dphi_q, T* dphi_k, T* dv);

/// Explicit-score variant: S = phi_q phi_k^T, row-normalized, times v.
/// `scratch` must hold n*n values.
template <typename T>
void quadratic_attn_fwd(std::size_t n, std::size_t dh, const T* phi_q, const T* phi_k, const T* v,
                        std::size_t ld, T eps, T* out, std::size_t ldo, T* scratch);

/// Softmax over `nt` keys with scale 1/sqrt(dh); probs is n x nt.
template <typename T>
void masked_softmax_fwd(std::size_t n, std::size_t nt, std::size_t dh, const T* q, std::size_t ldq,
                        const T* k, const T* v, std::size_t ldk, const std::uint8_t* mask,
                        T* out, std::size_t ldo, T* probs);

/// dq (n x dh, ldq) is overwritten; dk, dv (nt x dh, ldk) are overwritten.
template <typename T>
void masked_softmax_bwd(std::size_t n, std::size_t nt, std::size_t dh, const T* q, std::size_t ldq,
                        const T* k, const T* v, std::size_t ldk, const T* probs, const T* dout,
                        std::size_t ldo, T* dq, T* dk, T* dv);

}  // namespace kernels
}  // namespace ldsr
