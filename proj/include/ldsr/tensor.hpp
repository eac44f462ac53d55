#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldsr {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major N-dimensional array. Value semantics; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor identity(std::size_t n);
  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v);
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// MAC instrumentation. Every contraction kernel adds the number of
// multiply-accumulates it executes to a thread-local counter.

std::uint64_t mac_counter();
void reset_mac_counter();
void add_macs(std::uint64_t n);

// ---------------------------------------------------------------------------
// Raw GEMM kernels on row-major buffers. The reduction index is always
// walked in ascending order for each output element.

/// C (MxN) (+)= A (MxK) * B (KxN)
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate);

/// C (MxN) (+)= A^T * B with A stored KxM, B stored KxN
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate);

/// C (MxN) (+)= A * B^T with A stored MxK, B stored NxK
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc, bool accumulate);

// ---------------------------------------------------------------------------
// Tensor kernels.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
/// a^T * b
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
/// y += s * x
template <typename T>
void axpy(T s, const Tensor<T>& x, Tensor<T>& y);

template <typename T>
T sum(const Tensor<T>& a);
template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
T sum_squares(const Tensor<T>& a);
template <typename T>
T max_abs(const Tensor<T>& a);
template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// Throws NonFiniteError naming `where` if any element is NaN or Inf.
template <typename T>
void check_finite(const Tensor<T>& a, const char* where);
template <typename T>
bool all_finite(const Tensor<T>& a);

void require_same_shape(const Shape& a, const Shape& b, const char* where);

}  // namespace ldsr
