#include "ldsr/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ldsr {

void DegradationConfig::validate() const {
  if (downscale < 1) throw std::invalid_argument("DegradationConfig: downscale must be >= 1");
  if (blur_sigma_lo < 0 || blur_sigma_hi < blur_sigma_lo || noise_sigma_lo < 0 ||
      noise_sigma_hi < noise_sigma_lo) {
    throw std::invalid_argument("DegradationConfig: invalid sigma range");
  }
}

namespace {

void require_image(const Shape& s, const char* where) {
  if (s.size() != 4) throw ShapeError(std::string(where) + ": expected B x C x H x W");
}

// Half-sample symmetric index: d c b a | a b c d | d c b a.
std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel(double sigma) {
  const auto r = static_cast<std::ptrdiff_t>(4.0 * sigma + 0.5);
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double s = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    s += v;
  }
  for (auto& v : k) v /= s;
  return k;
}

}  // namespace

template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& image, double sigma) {
  require_image(image.shape(), "gaussian_blur");
  if (sigma < 0) throw std::invalid_argument("gaussian_blur: negative sigma");
  if (sigma == 0.0) return image;
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  const std::size_t planes = image.dim(0) * image.dim(1), H = image.dim(2), W = image.dim(3);
  const auto Hi = static_cast<std::ptrdiff_t>(H), Wi = static_cast<std::ptrdiff_t>(W);
  Tensor<T> tmp(image.shape()), out(image.shape());
  std::vector<double> line(static_cast<std::size_t>(Wi + 2 * r)), acc(W);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = image.ptr() + p * H * W;
    T* t = tmp.ptr() + p * H * W;
    for (std::ptrdiff_t y = 0; y < Hi; ++y) {
      for (std::ptrdiff_t x = -r; x < Wi + r; ++x) line[static_cast<std::size_t>(x + r)] = src[y * Wi + reflect(x, Wi)];
      for (std::ptrdiff_t x = 0; x < Wi; ++x) {
        double a = 0.0;
        for (std::ptrdiff_t j = -r; j <= r; ++j) a += k[static_cast<std::size_t>(j + r)] * line[static_cast<std::size_t>(x + j + r)];
        t[y * Wi + x] = static_cast<T>(a);
      }
    }
    T* o = out.ptr() + p * H * W;
    for (std::ptrdiff_t y = 0; y < Hi; ++y) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::ptrdiff_t j = -r; j <= r; ++j) {
        const double kj = k[static_cast<std::size_t>(j + r)];
        const T* row = t + reflect(y + j, Hi) * Wi;
        for (std::size_t x = 0; x < W; ++x) acc[x] += kj * row[x];
      }
      for (std::size_t x = 0; x < W; ++x) o[static_cast<std::size_t>(y) * W + x] = static_cast<T>(acc[x]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> area_downsample(const Tensor<T>& image, std::size_t factor) {
  require_image(image.shape(), "area_downsample");
  const std::size_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  if (factor == 0 || H % factor || W % factor) {
    throw ShapeError("area_downsample: " + shape_str(image.shape()) + " not divisible by " +
                     std::to_string(factor));
  }
  const std::size_t h = H / factor, w = W / factor;
  Tensor<T> out({B, C, h, w});
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < factor; ++dy)
            for (std::size_t dx = 0; dx < factor; ++dx)
              acc += image.at(b, c, y * factor + dy, x * factor + dx);
          out.at(b, c, y, x) = static_cast<T>(acc * inv);
        }
  return out;
}

template <typename T>
Tensor<T> synthesize_degradation(const Tensor<T>& x_h, const DegradationConfig& cfg, Rng& rng) {
  cfg.validate();
  require_image(x_h.shape(), "synthesize_degradation");
  const std::size_t B = x_h.dim(0), f = cfg.downscale;
  std::vector<Tensor<T>> out;
  for (std::size_t b = 0; b < B; ++b) {
    const double blur = rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi);
    const double noise = rng.uniform(cfg.noise_sigma_lo, cfg.noise_sigma_hi);
    Tensor<T> x = gaussian_blur(batch_item(x_h, b), blur);
    if (f > 1) {
      const Tensor<T> d = area_downsample(x, f);
      for (std::size_t c = 0; c < x.dim(1); ++c)
        for (std::size_t y = 0; y < x.dim(2); ++y)
          for (std::size_t xx = 0; xx < x.dim(3); ++xx) x.at(0, c, y, xx) = d.at(0, c, y / f, xx / f);
    }
    if (noise > 0.0) {
      const Tensor<T> n = gaussian_fill<T>(rng, x.shape(), noise);
      axpy(T(1), n, x);
    }
    for (auto& e : x.data()) e = std::clamp(e, T(0), T(1));
    out.push_back(std::move(x));
  }
  return stack_batch(out);
}

template <typename T>
std::vector<Tensor<T>> generate_toy_dataset(std::size_t n, std::size_t h, std::size_t w,
                                            std::uint64_t seed) {
  if (n == 0 || h == 0 || w == 0) throw std::invalid_argument("generate_toy_dataset: empty request");
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::vector<Tensor<T>> images;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng(seed).split(i);
    std::vector<double> img(3 * h * w);
    auto px = [&](std::size_t c, std::size_t y, std::size_t x) -> double& {
      return img[(c * h + y) * w + x];
    };
    double c0[3], c1[3];
    for (double& v : c0) v = rng.uniform(0.2, 0.8);
    for (double& v : c1) v = rng.uniform(0.2, 0.8);
    const double th = rng.uniform(0.0, kTwoPi);
    double umin = 1e300, umax = -1e300;
    std::vector<double> u(h * w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = std::cos(th) * static_cast<double>(x) + std::sin(th) * static_cast<double>(y);
        u[y * w + x] = v;
        umin = std::min(umin, v);
        umax = std::max(umax, v);
      }
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          px(c, y, x) = c0[c] + (c1[c] - c0[c]) * (u[y * w + x] - umin) / (umax - umin + 1e-9);

    for (int k = 0; k < 3; ++k) {
      const double a = rng.uniform(0.0, kTwoPi), lam = rng.uniform(16.0, 64.0);
      const double amp = rng.uniform(0.05, 0.15), ph = rng.uniform(0.0, kTwoPi);
      double col[3];
      for (double& v : col) v = rng.uniform(0.5, 1.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double s = std::sin(kTwoPi *
                                        (std::cos(a) * static_cast<double>(x) +
                                         std::sin(a) * static_cast<double>(y)) /
                                        lam +
                                    ph);
          for (std::size_t c = 0; c < 3; ++c) px(c, y, x) += amp * col[c] * s;
        }
    }
    for (int k = 0; k < 3; ++k) {
      const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(w) - 1));
      const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(h) - 1));
      const auto rw = static_cast<std::size_t>(rng.uniform_int(8, 47));
      const auto rh = static_cast<std::size_t>(rng.uniform_int(8, 47));
      double col[3];
      for (double& v : col) v = rng.uniform(-0.15, 0.15);
      for (std::size_t y = y0; y < std::min(h, y0 + rh); ++y)
        for (std::size_t x = x0; x < std::min(w, x0 + rw); ++x)
          for (std::size_t c = 0; c < 3; ++c) px(c, y, x) += col[c];
    }
    Tensor<T> t({1, 3, h, w});
    for (std::size_t j = 0; j < img.size(); ++j)
      t[j] = static_cast<T>(std::clamp(img[j] + 0.01 * rng.normal(), 0.0, 1.0));
    images.push_back(std::move(t));
  }
  return images;
}

template <typename T>
Tensor<T> random_crop(const Tensor<T>& image, std::size_t size, Rng& rng) {
  require_image(image.shape(), "random_crop");
  const std::size_t C = image.dim(1), H = image.dim(2), W = image.dim(3);
  if (image.dim(0) != 1 || size > H || size > W) {
    throw ShapeError("random_crop: cannot take " + std::to_string(size) + " crop of " +
                     shape_str(image.shape()));
  }
  const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(H - size)));
  const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(W - size)));
  Tensor<T> out({1, C, size, size});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < size; ++y)
      std::copy_n(&image.at(0, c, y0 + y, x0), size, &out.at(0, c, y, 0));
  return out;
}

template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: empty");
  Shape s = items.front().shape();
  require_image(s, "stack_batch");
  const std::size_t per = items.front().size();
  s[0] = 0;
  std::vector<T> data;
  data.reserve(per * items.size());
  for (const auto& it : items) {
    require_same_shape(it.shape(), items.front().shape(), "stack_batch");
    s[0] += it.dim(0);
    data.insert(data.end(), it.data().begin(), it.data().end());
  }
  return Tensor<T>(s, std::move(data));
}

template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, std::size_t b) {
  require_image(batch.shape(), "batch_item");
  Shape s = batch.shape();
  s[0] = 1;
  const std::size_t per = shape_numel(s);
  if (b >= batch.dim(0)) throw std::out_of_range("batch_item: index out of range");
  return Tensor<T>(s, std::vector<T>(batch.ptr() + b * per, batch.ptr() + (b + 1) * per));
}

#define LDSR_DATA_INST(T)                                                                        \
  template Tensor<T> gaussian_blur(const Tensor<T>&, double);                                    \
  template Tensor<T> area_downsample(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> synthesize_degradation(const Tensor<T>&, const DegradationConfig&, Rng&);   \
  template std::vector<Tensor<T>> generate_toy_dataset(std::size_t, std::size_t, std::size_t,   \
                                                       std::uint64_t);                           \
  template Tensor<T> random_crop(const Tensor<T>&, std::size_t, Rng&);                           \
  template Tensor<T> stack_batch(const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> batch_item(const Tensor<T>&, std::size_t);

LDSR_DATA_INST(float)
LDSR_DATA_INST(double)

}  // namespace ldsr
