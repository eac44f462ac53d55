#pragma once

#include <array>
#include <cstdint>
#include <memory>

#include "ldsr/tensor.hpp"

namespace ldsr {

struct LossWeights {
  double lambda2 = 1.0;
  double lambda_p = 2.0;
  double lambda_a = 1.0;
  double lambda_c = 1.0;

  void validate() const;
};

inline constexpr double kEpsStat = 1e-6;

/// Scalar value plus gradient w.r.t. the first argument.
template <typename T>
struct LossGrad {
  double value = 0.0;
  Tensor<T> grad;
};

/// Frozen seeded feature extractor: three 3x3 stride-2 convolutions
/// (3 -> 8 -> 16 -> 32 channels, zero padding 1) with SiLU. Each pixel's
/// feature vector is unit-normalized over channels; the distance is the
/// squared difference summed over channels, averaged over pixels and layers.
template <typename T>
class PerceptualNet {
 public:
  explicit PerceptualNet(std::uint64_t seed = 0x1F1F5);

  double distance(const Tensor<T>& a, const Tensor<T>& b) const;
  /// Gradient w.r.t. `a`; `b` is treated as a constant reference.
  LossGrad<T> distance_grad(const Tensor<T>& a, const Tensor<T>& b) const;

  static constexpr std::array<std::size_t, 4> kChannels{3, 8, 16, 32};

 private:
  struct Layer {
    Tensor<T> w;  // out x in x 3 x 3
    Tensor<T> b;
  };
  std::shared_ptr<const std::array<Layer, 3>> layers_;

  std::array<Tensor<T>, 3> features(const Tensor<T>& x, std::array<Tensor<T>, 3>* pre) const;
};

template <typename T>
double perceptual_distance(const Tensor<T>& a, const Tensor<T>& b, const PerceptualNet<T>& net);

/// lambda2 * mean((x_hat - x_h)^2) + lambda_p * perceptual(x_hat, x_h).
template <typename T>
double rec_loss(const Tensor<T>& x_hat, const Tensor<T>& x_h, const LossWeights& w,
                const PerceptualNet<T>& net);
template <typename T>
LossGrad<T> rec_loss_grad(const Tensor<T>& x_hat, const Tensor<T>& x_h, const LossWeights& w,
                          const PerceptualNet<T>& net);

template <typename T>
struct ChannelStats {
  Tensor<T> mu;  // B x C
  Tensor<T> s;   // B x C, population variance
  double eps_stat = kEpsStat;
};

template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& q, double eps_stat = kEpsStat);

/// Channel-wise Gaussian KL between the summaries of q_hat and q_h.
template <typename T>
double align_loss(const Tensor<T>& q_hat, const Tensor<T>& q_h, double eps_stat = kEpsStat);
/// Gradient w.r.t. q_hat; q_h is a constant target.
template <typename T>
LossGrad<T> align_loss_grad(const Tensor<T>& q_hat, const Tensor<T>& q_h,
                            double eps_stat = kEpsStat);

/// mean((q_adapt - q_base)^2). The gradient w.r.t. q_base is the negation.
template <typename T>
double cons_loss(const Tensor<T>& q_adapt, const Tensor<T>& q_base);
template <typename T>
LossGrad<T> cons_loss_grad(const Tensor<T>& q_adapt, const Tensor<T>& q_base);

struct LossParts {
  double rec = 0.0;
  double align = 0.0;
  double cons = 0.0;
};

/// rec + lambda_a * align + lambda_c * cons. Throws on a non-finite part.
double total_loss(const LossParts& parts, const LossWeights& w);
/// omega * (rec + lambda_a * align); the consistency term is omitted.
double calib_loss(const LossParts& parts, const LossWeights& w, double omega_t);

}  // namespace ldsr
