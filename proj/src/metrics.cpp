#include "ldsr/metrics.hpp"

#include <cmath>
#include <limits>

namespace ldsr {

template <typename T>
Tensor<double> luma(const Tensor<T>& image) {
  if (image.rank() != 4 || image.dim(1) != 3) throw ShapeError("luma: expected B x 3 x H x W");
  const std::size_t B = image.dim(0), n = image.dim(2) * image.dim(3);
  Tensor<double> y({B, image.dim(2), image.dim(3)});
  for (std::size_t b = 0; b < B; ++b) {
    const T* p = image.ptr() + b * 3 * n;
    for (std::size_t i = 0; i < n; ++i)
      y[b * n + i] = 0.299 * p[i] + 0.587 * p[n + i] + 0.114 * p[2 * n + i];
  }
  return y;
}

template <typename T>
double psnr_y(const Tensor<T>& x, const Tensor<T>& ref) {
  require_same_shape(x.shape(), ref.shape(), "psnr_y");
  const auto a = luma(x), b = luma(ref);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

template <typename T>
double ssim_y(const Tensor<T>& x, const Tensor<T>& ref) {
  require_same_shape(x.shape(), ref.shape(), "ssim_y");
  constexpr std::size_t kWin = 11;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  const std::size_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
  if (H < kWin || W < kWin) throw ShapeError("ssim_y: image smaller than the 11x11 window");
  double g[kWin], gs = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    gs += g[i];
  }
  for (double& v : g) v /= gs;

  const auto a = luma(x), b = luma(ref);
  const std::size_t oh = H - kWin + 1, ow = W - kWin + 1;
  double total = 0.0;
  for (std::size_t n = 0; n < B; ++n) {
    const double* pa = a.ptr() + n * H * W;
    const double* pb = b.ptr() + n * H * W;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t i = 0; i < kWin; ++i)
          for (std::size_t j = 0; j < kWin; ++j) {
            const double w = g[i] * g[j];
            const double va = pa[(y + i) * W + xx + j], vb = pb[(y + i) * W + xx + j];
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                 ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
      }
  }
  return total / static_cast<double>(B * oh * ow);
}

#define LDSR_METRIC_INST(T)                                 \
  template Tensor<double> luma(const Tensor<T>&);           \
  template double psnr_y(const Tensor<T>&, const Tensor<T>&); \
  template double ssim_y(const Tensor<T>&, const Tensor<T>&);

LDSR_METRIC_INST(float)
LDSR_METRIC_INST(double)

}  // namespace ldsr
