#include "ldsr/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ldsr {

void SchedulerConfig::validate() const {
  if (T <= 0) throw std::invalid_argument("SchedulerConfig: T must be positive");
  if (!(0 <= t_min && t_min <= t_max && t_max <= T)) {
    throw std::invalid_argument("SchedulerConfig: need 0 <= t_min <= t_max <= T");
  }
  if (!(0 < tau_g && tau_g <= T)) throw std::invalid_argument("SchedulerConfig: need 0 < tau_g <= T");
}

namespace {
void check_t(double t, double T, const char* where) {
  if (!(t >= 0 && t <= T)) {
    throw std::out_of_range(std::string(where) + ": t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(T) + "]");
  }
}
}  // namespace

double sigma(double t, double T) {
  check_t(t, T, "sigma");
  return t / T;
}

double alpha(double t, double T) { return 1.0 - sigma(t, T); }

double omega(double t, double T) {
  check_t(t, T, "omega");
  const double lt = std::log(T + 1.0);
  return (lt - std::log(t + 1.0)) / lt;
}

template <typename T>
Tensor<T> perturb(const Tensor<T>& z, double t, const Tensor<T>& eps, double horizon) {
  require_same_shape(z.shape(), eps.shape(), "perturb");
  const T a = static_cast<T>(alpha(t, horizon)), s = static_cast<T>(sigma(t, horizon));
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = a * z[i] + s * eps[i];
  return out;
}

std::int64_t sample_timestep(Rng& rng, const SchedulerConfig& cfg) {
  cfg.validate();
  return rng.uniform_int(cfg.t_min, cfg.t_max);
}

template <typename T>
NoisePair<T> build_noise_pair(const Tensor<T>& z_hat, const Tensor<T>& z_h, Rng& rng,
                              const SchedulerConfig& cfg) {
  require_same_shape(z_hat.shape(), z_h.shape(), "build_noise_pair");
  NoisePair<T> p;
  p.t = sample_timestep(rng, cfg);
  p.eps = gaussian_fill<T>(rng, z_hat.shape());
  const double horizon = static_cast<double>(cfg.T);
  p.z_tilde_hat = perturb(z_hat, static_cast<double>(p.t), p.eps, horizon);
  p.z_tilde_h = perturb(z_h, static_cast<double>(p.t), p.eps, horizon);
  return p;
}

template Tensor<float> perturb(const Tensor<float>&, double, const Tensor<float>&, double);
template Tensor<double> perturb(const Tensor<double>&, double, const Tensor<double>&, double);
template NoisePair<float> build_noise_pair(const Tensor<float>&, const Tensor<float>&, Rng&,
                                           const SchedulerConfig&);
template NoisePair<double> build_noise_pair(const Tensor<double>&, const Tensor<double>&, Rng&,
                                            const SchedulerConfig&);

}  // namespace ldsr
