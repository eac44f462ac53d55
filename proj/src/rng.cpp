#include "ldsr/rng.hpp"

#include <cmath>
#include <numbers>

namespace ldsr {

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  ++int_draws_;
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<std::int64_t>(next_u64());
  // Rejection sampling on the largest multiple of range.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % range);
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
Tensor<T> gaussian_fill(Rng& rng, const Shape& shape, double stddev) {
  if (shape.empty() || shape_numel(shape) == 0) {
    throw ShapeError("gaussian_fill: shape must be positive");
  }
  rng.note_gaussian_fill();
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

template <typename T>
Tensor<T> gaussian_fill(Rng& rng, const Shape& shape) {
  return gaussian_fill<T>(rng, shape, 1.0);
}

template Tensor<float> gaussian_fill<float>(Rng&, const Shape&);
template Tensor<double> gaussian_fill<double>(Rng&, const Shape&);
template Tensor<float> gaussian_fill<float>(Rng&, const Shape&, double);
template Tensor<double> gaussian_fill<double>(Rng&, const Shape&, double);

}  // namespace ldsr
