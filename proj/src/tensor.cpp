#include "ldsr/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace ldsr {

namespace {
thread_local std::uint64_t g_macs = 0;
}

std::uint64_t mac_counter() { return g_macs; }
void reset_mac_counter() { g_macs = 0; }
void add_macs(std::uint64_t n) { g_macs += n; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* where) {
  if (a != b) {
    throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = T(1);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_rows(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw ShapeError("Tensor::from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({m, n}, std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

// ---------------------------------------------------------------------------

template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * ldc;
    if (!accumulate) std::fill(c, c + N, T(0));
    const T* a = A + i * lda;
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = a[k];
      const T* b = B + k * ldb;
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
  add_macs(static_cast<std::uint64_t>(M) * N * K);
}

template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < M; ++i) std::fill(C + i * ldc, C + i * ldc + N, T(0));
  }
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * lda;
    const T* b = B + k * ldb;
    for (std::size_t i = 0; i < M; ++i) {
      const T aki = a[i];
      T* c = C + i * ldc;
      for (std::size_t j = 0; j < N; ++j) c[j] += aki * b[j];
    }
  }
  add_macs(static_cast<std::uint64_t>(M) * N * K);
}

template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate) {
  // Transpose B into a KxN scratch so the inner loop stays contiguous.
  std::vector<T> bt(K * N);
  for (std::size_t j = 0; j < N; ++j) {
    const T* b = B + j * ldb;
    for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = b[k];
  }
  gemm_nn(M, N, K, A, lda, bt.data(), N, C, ldc, accumulate);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor<T> c({M, N});
  gemm_nn(M, N, K, a.ptr(), K, b.ptr(), N, c.ptr(), N, false);
  check_finite(c, "matmul");
  return c;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()) + "^T");
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(0);
  Tensor<T> c({M, N});
  gemm_nt(M, N, K, a.ptr(), K, b.ptr(), K, c.ptr(), N, false);
  check_finite(c, "matmul_nt");
  return c;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw ShapeError("matmul_tn: incompatible shapes " + shape_str(a.shape()) + "^T * " +
                     shape_str(b.shape()));
  }
  const std::size_t K = a.dim(0), M = a.dim(1), N = b.dim(1);
  Tensor<T> c({M, N});
  gemm_tn(M, N, K, a.ptr(), M, b.ptr(), N, c.ptr(), N, false);
  check_finite(c, "matmul_tn");
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: rank-2 tensor required");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  check_finite(c, "add");
  return c;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  check_finite(c, "sub");
  return c;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  check_finite(c, "mul");
  return c;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> c = a;
  for (auto& v : c.data()) v *= s;
  check_finite(c, "scale");
  return c;
}

template <typename T>
void axpy(T s, const Tensor<T>& x, Tensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "axpy");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
}

template <typename T>
T sum(const Tensor<T>& a) {
  T s = 0;
  for (auto v : a.data()) s += v;
  return s;
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T sum_squares(const Tensor<T>& a) {
  T s = 0;
  for (auto v : a.data()) s += v * v;
  return s;
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m = 0;
  for (auto v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  for (auto v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
void check_finite(const Tensor<T>& a, const char* where) {
  if (!all_finite(a)) throw NonFiniteError(std::string(where) + ": non-finite value");
}

#define LDSR_INSTANTIATE(T)                                                                     \
  template class Tensor<T>;                                                                     \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,        \
                           const T*, std::size_t, T*, std::size_t, bool);                       \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,        \
                           const T*, std::size_t, T*, std::size_t, bool);                       \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,        \
                           const T*, std::size_t, T*, std::size_t, bool);                       \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> matmul_tn<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                            \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                             \
  template void axpy<T>(T, const Tensor<T>&, Tensor<T>&);                                       \
  template T sum<T>(const Tensor<T>&);                                                          \
  template T dot<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template T sum_squares<T>(const Tensor<T>&);                                                  \
  template T max_abs<T>(const Tensor<T>&);                                                      \
  template T max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template bool all_finite<T>(const Tensor<T>&);                                                \
  template void check_finite<T>(const Tensor<T>&, const char*);

LDSR_INSTANTIATE(float)
LDSR_INSTANTIATE(double)

#undef LDSR_INSTANTIATE

}  // namespace ldsr
