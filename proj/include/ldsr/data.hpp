#pragma once

#include <cstdint>
#include <vector>

#include "ldsr/rng.hpp"
#include "ldsr/tensor.hpp"

namespace ldsr {

/// Blur -> area downsample -> nearest re-upsample -> additive noise.
struct DegradationConfig {
  double blur_sigma_lo = 0.5;
  double blur_sigma_hi = 2.0;
  std::size_t downscale = 4;
  double noise_sigma_lo = 0.0;
  double noise_sigma_hi = 0.01;
  std::uint64_t seed = 0xDE6;

  void validate() const;
};

/// Separable Gaussian blur with half-sample symmetric borders, kernel
/// truncated at 4 sigma. sigma == 0 is the identity.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& image, double sigma);

/// Mean over non-overlapping factor x factor cells.
template <typename T>
Tensor<T> area_downsample(const Tensor<T>& image, std::size_t factor);

/// Per-sample degradation of a B x 3 x H x W batch; output has the input's
/// shape and is clipped to [0, 1]. Draw order per sample: blur sigma, noise
/// sigma, noise field.
template <typename T>
Tensor<T> synthesize_degradation(const Tensor<T>& x_h, const DegradationConfig& cfg, Rng& rng);

/// Procedural 1 x 3 x h x w images: a color gradient, three oriented
/// sinusoids, three rectangles and faint texture noise, clipped to [0, 1].
template <typename T>
std::vector<Tensor<T>> generate_toy_dataset(std::size_t n, std::size_t h, std::size_t w,
                                            std::uint64_t seed);

/// Random size x size window of a 1 x 3 x H x W image.
template <typename T>
Tensor<T> random_crop(const Tensor<T>& image, std::size_t size, Rng& rng);

/// Concatenate 1 x C x H x W tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items);

/// Sample b of a batch as a 1 x C x H x W tensor.
template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, std::size_t b);

}  // namespace ldsr
