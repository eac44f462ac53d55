#pragma once

#include "ldsr/tensor.hpp"

namespace ldsr {

inline constexpr double kPsnrReportCap = 100.0;

/// BT.601 luma 0.299 R + 0.587 G + 0.114 B of a B x 3 x H x W tensor (B x H x W).
template <typename T>
Tensor<double> luma(const Tensor<T>& image);

/// 10 log10(1 / MSE) on luma over the whole tensor; +inf when identical.
template <typename T>
double psnr_y(const Tensor<T>& x, const Tensor<T>& ref);

/// Mean SSIM on luma: 11x11 Gaussian window (sigma 1.5), valid region,
/// C1 = 0.01^2, C2 = 0.03^2 for data range 1. Averaged over the batch.
template <typename T>
double ssim_y(const Tensor<T>& x, const Tensor<T>& ref);

/// min(psnr, 100) for reports and JSON.
inline double report_psnr(double psnr) { return psnr < kPsnrReportCap ? psnr : kPsnrReportCap; }

}  // namespace ldsr
