#pragma once

#include <cstdint>

#include "ldsr/tensor.hpp"

namespace ldsr {

/// SplitMix64 mixing step; also used to derive child seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based generator: output k is mix64(seed_key + k * golden). The
/// sequence depends only on the seed and the number of draws so far.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), key_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix64(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Standard normal via Box-Muller (one value per call, two uniforms consumed).
  double normal();

  /// Independent generator for a named sub-stream.
  Rng split(std::uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream + 0x51ED27ull))); }

  // Draw instrumentation used to verify matched-noise and one-draw contracts.
  std::uint64_t gaussian_fills() const { return gaussian_fills_; }
  std::uint64_t int_draws() const { return int_draws_; }
  void note_gaussian_fill() { ++gaussian_fills_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::uint64_t gaussian_fills_ = 0;
  std::uint64_t int_draws_ = 0;
};

/// Tensor of i.i.d. N(0,1) samples.
template <typename T>
Tensor<T> gaussian_fill(Rng& rng, const Shape& shape);

/// Tensor of i.i.d. N(0, stddev^2) samples.
template <typename T>
Tensor<T> gaussian_fill(Rng& rng, const Shape& shape, double stddev);

}  // namespace ldsr
