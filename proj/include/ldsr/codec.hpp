#pragma once

#include <cstdint>
#include <memory>

#include "ldsr/tensor.hpp"

namespace ldsr {

inline constexpr std::size_t kPatch = 32;
inline constexpr std::size_t kPatchDim = 3 * kPatch * kPatch;  // 3072
/// Number of leading analytic basis vectors (smooth content + 4-px detail carriers).
inline constexpr std::size_t kStructuredChannels = 32;

struct CodecConfig {
  std::uint64_t seed = 0xC0DEC;
  std::size_t latent_channels = 32;  // C_lat exposed to the backbone
  double latent_scale = 0.1;         // view = latent_scale * leading coefficients
};

/// Compact latent. `full` holds all 3072 orthogonal coefficients per token
/// (B x 3072 x h x w); the backbone sees only the scaled leading channels.
template <typename T>
struct Latent {
  Tensor<T> full;
  std::size_t view_channels = 0;
  T scale = T(1);

  std::size_t batch() const { return full.dim(0); }
  std::size_t height() const { return full.dim(2); }
  std::size_t width() const { return full.dim(3); }
  std::size_t tokens() const { return height() * width(); }

  /// B x C_lat x h x w backbone-facing tensor.
  Tensor<T> view() const;
  /// Copy with the leading channels replaced by `v` (B x C_lat x h x w).
  Latent with_view(const Tensor<T>& v) const;
};

/// Image after reflect-padding to a multiple of 32, with its original size.
template <typename T>
struct AlignedImage {
  Tensor<T> image;
  std::size_t orig_h = 0;
  std::size_t orig_w = 0;
};

/// Frozen 32x space-to-depth codec with a fixed orthogonal patch basis.
/// The basis is built once per seed and shared; the object is immutable.
template <typename T>
class CodecState {
 public:
  explicit CodecState(CodecConfig cfg = {});

  const CodecConfig& config() const { return cfg_; }
  std::size_t latent_channels() const { return cfg_.latent_channels; }

  Latent<T> encode(const Tensor<T>& image) const;
  /// Inverse projection then depth-to-space. `clamp` limits output to [0,1].
  Tensor<T> decode(const Latent<T>& z, bool clamp = true) const;

  /// Scaled leading coefficients only (B x C_lat x h x w); equals
  /// encode(image).view() without the full projection.
  Tensor<T> encode_view(const Tensor<T>& image) const;
  /// Image-space change caused by adding `dview` to the view channels of a
  /// latent: decode(z.with_view(z.view() + dview)) - decode(z), unclamped.
  Tensor<T> decode_view_delta(const Tensor<T>& dview) const;

  /// Gradient of a loss w.r.t. the view channels given its gradient w.r.t.
  /// the unclamped decoded image (B x 3 x H x W).
  Tensor<T> decode_view_grad(const Tensor<T>& image_grad) const;

  /// Column k of the basis (patch-space vector of coefficient k).
  Tensor<T> basis_vector(std::size_t k) const;
  /// max |Q^T Q - I| computed in the working precision.
  double orthogonality_error() const;

  struct Impl;

 private:
  CodecConfig cfg_;
  std::shared_ptr<const Impl> impl_;
};

/// B x 3 x H x W -> B x 3072 x H/32 x W/32 raw patch values (no projection).
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& image);
template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& patches);

/// Reflect-pads right/bottom so H and W become multiples of 32.
template <typename T>
AlignedImage<T> align_to_32(const Tensor<T>& image);
template <typename T>
Tensor<T> crop(const Tensor<T>& image, std::size_t h, std::size_t w);

/// Nearest-neighbour integer upscale.
template <typename T>
Tensor<T> upscale_nearest(const Tensor<T>& image, std::size_t factor);

}  // namespace ldsr
