#include "ldsr/codec.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <map>
#include <mutex>

#include "ldsr/rng.hpp"

namespace ldsr {

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;

double legendre(int n, double x) {
  switch (n) {
    case 0: return 1.0;
    case 1: return x;
    case 2: return 0.5 * (3 * x * x - 1);
    default: return 0.5 * (5 * x * x * x - 3 * x);
  }
}

// Leading analytic patch basis: ten gray polynomial content modes, the same
// ten modes carrying a 4-pixel sawtooth along x and along y, and two chroma
// offsets. These are the channels the backbone reads and writes.
MatD structured_basis() {
  MatD m = MatD::Zero(kPatchDim, kStructuredChannels);
  std::vector<std::pair<int, int>> modes;
  for (int total = 0; total <= 3; ++total)
    for (int i = total; i >= 0; --i) modes.emplace_back(i, total - i);

  auto set_gray = [&](std::size_t col, auto&& fn) {
    for (std::size_t y = 0; y < kPatch; ++y)
      for (std::size_t x = 0; x < kPatch; ++x) {
        const double v = fn(x, y);
        for (std::size_t c = 0; c < 3; ++c) m(c * kPatch * kPatch + y * kPatch + x, col) = v;
      }
  };
  auto px = [](std::size_t x) { return (static_cast<double>(x) - 15.5) / 16.0; };
  auto saw = [](std::size_t x) { return static_cast<double>(x % 4) - 1.5; };

  std::size_t col = 0;
  for (auto [i, j] : modes)
    set_gray(col++, [&](std::size_t x, std::size_t y) { return legendre(i, px(x)) * legendre(j, px(y)); });
  for (auto [i, j] : modes)
    set_gray(col++, [&](std::size_t x, std::size_t y) {
      return saw(x) * legendre(i, px(x)) * legendre(j, px(y));
    });
  for (auto [i, j] : modes)
    set_gray(col++, [&](std::size_t x, std::size_t y) {
      return saw(y) * legendre(i, px(x)) * legendre(j, px(y));
    });
  const std::array<std::array<double, 3>, 2> chroma{{{1, -1, 0}, {1, 1, -2}}};
  for (const auto& w : chroma) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < kPatch * kPatch; ++p) m(c * kPatch * kPatch + p, col) = w[c];
    ++col;
  }
  return m;
}

// Q from the QR decomposition of [analytic | seeded Gaussian]; columns are
// sign-fixed so the leading ones match the Gram-Schmidt order of the basis.
std::shared_ptr<const MatD> build_basis(std::uint64_t seed) {
  static std::mutex mu;
  static std::map<std::uint64_t, std::shared_ptr<const MatD>> cache;
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = cache.find(seed); it != cache.end()) return it->second;

  MatD m(kPatchDim, kPatchDim);
  m.leftCols(kStructuredChannels) = structured_basis();
  Rng rng(seed);
  for (Eigen::Index j = kStructuredChannels; j < static_cast<Eigen::Index>(kPatchDim); ++j)
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(kPatchDim); ++i) m(i, j) = rng.normal();

  Eigen::HouseholderQR<MatD> qr(m);
  MatD q = qr.householderQ();
  const MatD& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  auto out = std::make_shared<const MatD>(std::move(q));
  cache.emplace(seed, out);
  return out;
}

template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

}  // namespace

template <typename T>
struct CodecState<T>::Impl {
  MatT<T> q;  // 3072 x 3072, patch = q * coeffs
};

template <typename T>
CodecState<T>::CodecState(CodecConfig cfg) : cfg_(cfg) {
  if (cfg_.latent_channels == 0 || cfg_.latent_channels > kPatchDim) {
    throw std::invalid_argument("CodecState: latent_channels must be in [1, 3072]");
  }
  if (!(cfg_.latent_scale > 0)) throw std::invalid_argument("CodecState: latent_scale must be > 0");
  auto basis = build_basis(cfg_.seed);
  auto impl = std::make_shared<Impl>();
  impl->q = basis->template cast<T>();
  impl_ = std::move(impl);
}

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& image) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("space_to_depth: expected Bx3xHxW, got " + shape_str(image.shape()));
  }
  const std::size_t B = image.dim(0), H = image.dim(2), W = image.dim(3);
  if (H % kPatch || W % kPatch) {
    throw ShapeError("space_to_depth: H and W must be multiples of 32 (got " + std::to_string(H) +
                     "x" + std::to_string(W) + "); pad with align_to_32 first");
  }
  const std::size_t h = H / kPatch, w = W / kPatch;
  Tensor<T> out({B, kPatchDim, h, w});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t k = c * kPatch * kPatch + (y % kPatch) * kPatch + (x % kPatch);
          out.at(b, k, y / kPatch, x / kPatch) = image.at(b, c, y, x);
        }
  return out;
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& patches) {
  if (patches.rank() != 4 || patches.dim(1) != kPatchDim) {
    throw ShapeError("depth_to_space: expected Bx3072xhxw, got " + shape_str(patches.shape()));
  }
  const std::size_t B = patches.dim(0), h = patches.dim(2), w = patches.dim(3);
  const std::size_t H = h * kPatch, W = w * kPatch;
  Tensor<T> out({B, 3, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t k = c * kPatch * kPatch + (y % kPatch) * kPatch + (x % kPatch);
          out.at(b, c, y, x) = patches.at(b, k, y / kPatch, x / kPatch);
        }
  return out;
}

template <typename T>
Latent<T> CodecState<T>::encode(const Tensor<T>& image) const {
  Tensor<T> p = space_to_depth(image);
  const std::size_t B = p.dim(0), n = p.dim(2) * p.dim(3);
  Latent<T> z{Tensor<T>(p.shape()), cfg_.latent_channels, static_cast<T>(cfg_.latent_scale)};
  const auto D = static_cast<Eigen::Index>(kPatchDim);
  const auto N = static_cast<Eigen::Index>(n);
  for (std::size_t b = 0; b < B; ++b) {
    // Per image the B x 3072 x h x w block is a column-major (hw x 3072) matrix.
    Eigen::Map<const MatT<T>> pt(p.ptr() + b * kPatchDim * n, N, D);
    Eigen::Map<MatT<T>> zt(z.full.ptr() + b * kPatchDim * n, N, D);
    zt.noalias() = pt * impl_->q;
  }
  add_macs(static_cast<std::uint64_t>(B) * n * kPatchDim * kPatchDim);
  check_finite(z.full, "encode");
  return z;
}

template <typename T>
Tensor<T> CodecState<T>::decode(const Latent<T>& z, bool clamp) const {
  if (z.full.rank() != 4 || z.full.dim(1) != kPatchDim) {
    throw ShapeError("decode: latent must have 3072 internal channels, got " +
                     shape_str(z.full.shape()));
  }
  if (z.view_channels != cfg_.latent_channels) {
    throw ShapeError("decode: latent has " + std::to_string(z.view_channels) +
                     " view channels, codec expects " + std::to_string(cfg_.latent_channels));
  }
  const std::size_t B = z.full.dim(0), n = z.full.dim(2) * z.full.dim(3);
  Tensor<T> p(z.full.shape());
  const auto D = static_cast<Eigen::Index>(kPatchDim);
  const auto N = static_cast<Eigen::Index>(n);
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Map<const MatT<T>> zt(z.full.ptr() + b * kPatchDim * n, N, D);
    Eigen::Map<MatT<T>> pt(p.ptr() + b * kPatchDim * n, N, D);
    pt.noalias() = zt * impl_->q.transpose();
  }
  add_macs(static_cast<std::uint64_t>(B) * n * kPatchDim * kPatchDim);
  Tensor<T> img = depth_to_space(p);
  if (clamp)
    for (auto& v : img.data()) v = std::clamp(v, T(0), T(1));
  check_finite(img, "decode");
  return img;
}

template <typename T>
Tensor<T> CodecState<T>::decode_view_grad(const Tensor<T>& image_grad) const {
  Tensor<T> dp = space_to_depth(image_grad);
  const std::size_t B = dp.dim(0), h = dp.dim(2), w = dp.dim(3), n = h * w;
  const std::size_t C = cfg_.latent_channels;
  Tensor<T> dv({B, C, h, w});
  const auto D = static_cast<Eigen::Index>(kPatchDim);
  const auto N = static_cast<Eigen::Index>(n);
  const auto Ci = static_cast<Eigen::Index>(C);
  const T inv_scale = static_cast<T>(1.0 / cfg_.latent_scale);
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Map<const MatT<T>> g(dp.ptr() + b * kPatchDim * n, N, D);
    Eigen::Map<MatT<T>> out(dv.ptr() + b * C * n, N, Ci);
    out.noalias() = inv_scale * (g * impl_->q.leftCols(Ci));
  }
  return dv;
}

template <typename T>
Tensor<T> CodecState<T>::encode_view(const Tensor<T>& image) const {
  Tensor<T> p = space_to_depth(image);
  const std::size_t B = p.dim(0), h = p.dim(2), w = p.dim(3), n = h * w;
  const std::size_t C = cfg_.latent_channels;
  Tensor<T> v({B, C, h, w});
  const auto D = static_cast<Eigen::Index>(kPatchDim);
  const auto N = static_cast<Eigen::Index>(n);
  const auto Ci = static_cast<Eigen::Index>(C);
  const T s = static_cast<T>(cfg_.latent_scale);
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Map<const MatT<T>> pt(p.ptr() + b * kPatchDim * n, N, D);
    Eigen::Map<MatT<T>> out(v.ptr() + b * C * n, N, Ci);
    out.noalias() = s * (pt * impl_->q.leftCols(Ci));
  }
  add_macs(static_cast<std::uint64_t>(B) * n * kPatchDim * C);
  check_finite(v, "encode_view");
  return v;
}

template <typename T>
Tensor<T> CodecState<T>::decode_view_delta(const Tensor<T>& dview) const {
  const std::size_t C = cfg_.latent_channels;
  if (dview.rank() != 4 || dview.dim(1) != C) {
    throw ShapeError("decode_view_delta: expected B x " + std::to_string(C) + " x h x w");
  }
  const std::size_t B = dview.dim(0), h = dview.dim(2), w = dview.dim(3), n = h * w;
  Tensor<T> p({B, kPatchDim, h, w});
  const auto D = static_cast<Eigen::Index>(kPatchDim);
  const auto N = static_cast<Eigen::Index>(n);
  const auto Ci = static_cast<Eigen::Index>(C);
  const T inv = static_cast<T>(1.0 / cfg_.latent_scale);
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Map<const MatT<T>> dv(dview.ptr() + b * C * n, N, Ci);
    Eigen::Map<MatT<T>> out(p.ptr() + b * kPatchDim * n, N, D);
    out.noalias() = inv * (dv * impl_->q.leftCols(Ci).transpose());
  }
  add_macs(static_cast<std::uint64_t>(B) * n * kPatchDim * C);
  return depth_to_space(p);
}

template <typename T>
Tensor<T> CodecState<T>::basis_vector(std::size_t k) const {
  Tensor<T> v({kPatchDim});
  for (std::size_t i = 0; i < kPatchDim; ++i) v[i] = impl_->q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  return v;
}

template <typename T>
double CodecState<T>::orthogonality_error() const {
  MatT<T> g = impl_->q.transpose() * impl_->q;
  g -= MatT<T>::Identity(g.rows(), g.cols());
  return static_cast<double>(g.cwiseAbs().maxCoeff());
}

template <typename T>
Tensor<T> Latent<T>::view() const {
  const std::size_t B = batch(), n = tokens();
  Tensor<T> v({B, view_channels, height(), width()});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < view_channels; ++c) {
      const T* src = full.ptr() + (b * kPatchDim + c) * n;
      T* dst = v.ptr() + (b * view_channels + c) * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] = scale * src[i];
    }
  return v;
}

template <typename T>
Latent<T> Latent<T>::with_view(const Tensor<T>& v) const {
  require_same_shape(v.shape(), {batch(), view_channels, height(), width()}, "Latent::with_view");
  Latent out = *this;
  const std::size_t n = tokens();
  const T inv = T(1) / scale;
  for (std::size_t b = 0; b < batch(); ++b)
    for (std::size_t c = 0; c < view_channels; ++c) {
      const T* src = v.ptr() + (b * view_channels + c) * n;
      T* dst = out.full.ptr() + (b * kPatchDim + c) * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] * inv;
    }
  return out;
}

namespace {
std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  std::size_t m = i % period;
  return m < n ? m : period - m;
}
}  // namespace

template <typename T>
AlignedImage<T> align_to_32(const Tensor<T>& image) {
  if (image.rank() != 4) throw ShapeError("align_to_32: expected BxCxHxW");
  const std::size_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  const std::size_t Hp = (H + kPatch - 1) / kPatch * kPatch;
  const std::size_t Wp = (W + kPatch - 1) / kPatch * kPatch;
  if (Hp == H && Wp == W) return {image, H, W};
  Tensor<T> out({B, C, Hp, Wp});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < Hp; ++y)
        for (std::size_t x = 0; x < Wp; ++x)
          out.at(b, c, y, x) = image.at(b, c, reflect_index(y, H), reflect_index(x, W));
  return {std::move(out), H, W};
}

template <typename T>
Tensor<T> crop(const Tensor<T>& image, std::size_t h, std::size_t w) {
  if (image.rank() != 4 || h > image.dim(2) || w > image.dim(3)) {
    throw ShapeError("crop: target larger than image");
  }
  const std::size_t B = image.dim(0), C = image.dim(1);
  Tensor<T> out({B, C, h, w});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out.at(b, c, y, x) = image.at(b, c, y, x);
  return out;
}

template <typename T>
Tensor<T> upscale_nearest(const Tensor<T>& image, std::size_t factor) {
  if (image.rank() != 4 || factor == 0) throw ShapeError("upscale_nearest: bad input");
  const std::size_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  Tensor<T> out({B, C, H * factor, W * factor});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H * factor; ++y)
        for (std::size_t x = 0; x < W * factor; ++x)
          out.at(b, c, y, x) = image.at(b, c, y / factor, x / factor);
  return out;
}

template struct Latent<float>;
template struct Latent<double>;
template class CodecState<float>;
template class CodecState<double>;
template Tensor<float> space_to_depth(const Tensor<float>&);
template Tensor<double> space_to_depth(const Tensor<double>&);
template Tensor<float> depth_to_space(const Tensor<float>&);
template Tensor<double> depth_to_space(const Tensor<double>&);
template AlignedImage<float> align_to_32(const Tensor<float>&);
template AlignedImage<double> align_to_32(const Tensor<double>&);
template Tensor<float> crop(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> crop(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> upscale_nearest(const Tensor<float>&, std::size_t);
template Tensor<double> upscale_nearest(const Tensor<double>&, std::size_t);

}  // namespace ldsr
