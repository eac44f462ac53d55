#pragma once

#include <cstdint>

#include "ldsr/rng.hpp"
#include "ldsr/tensor.hpp"

namespace ldsr {

struct SchedulerConfig {
  std::int64_t T = 1000;
  std::int64_t tau_g = 900;
  std::int64_t t_min = 70;
  std::int64_t t_max = 650;

  void validate() const;
  /// Prompts describe the clean target (default).
  static SchedulerConfig hq_preset() { return {}; }
  /// Prompts extracted from the degraded input.
  static SchedulerConfig lq_preset() { return {1000, 999, 20, 980}; }
};

/// Linear schedule sigma_t = t / T.
double sigma(double t, double T);
/// alpha_t = 1 - sigma_t.
double alpha(double t, double T);

/// Timestep weight (log(T+1) - log(t+1)) / log(T+1).
double omega(double t, double T);

/// alpha_t z + sigma_t eps.
template <typename T>
Tensor<T> perturb(const Tensor<T>& z, double t, const Tensor<T>& eps, double horizon);

/// Uniform integer in [t_min, t_max].
std::int64_t sample_timestep(Rng& rng, const SchedulerConfig& cfg);

/// Restored and reference latents perturbed with one shared t and one eps.
template <typename T>
struct NoisePair {
  Tensor<T> z_tilde_hat;
  Tensor<T> z_tilde_h;
  std::int64_t t = 0;
  Tensor<T> eps;
};

/// Draws exactly one timestep and one Gaussian fill from `rng`.
template <typename T>
NoisePair<T> build_noise_pair(const Tensor<T>& z_hat, const Tensor<T>& z_h, Rng& rng,
                              const SchedulerConfig& cfg);

}  // namespace ldsr
