#include <gtest/gtest.h>

#include <cmath>

#include "ldsr/metrics.hpp"
#include "ldsr/rng.hpp"

using namespace ldsr;

TEST(Psnr, TwentyDecibelsAtLumaMse001) {
  Tensor<double> ref({1, 3, 16, 16});
  ref.fill(0.4);
  Tensor<double> x = ref;
  // A uniform +0.1 on every channel moves luma by 0.1 (weights sum to 1).
  for (auto& v : x.data()) v += 0.1;
  EXPECT_NEAR(psnr_y(x, ref), 20.0, 1e-9);
}

TEST(Psnr, IdenticalImagesAreInfiniteAndCapped) {
  Tensor<float> x({1, 3, 16, 16});
  x.fill(0.2f);
  EXPECT_TRUE(std::isinf(psnr_y(x, x)));
  EXPECT_EQ(report_psnr(psnr_y(x, x)), 100.0);
  EXPECT_NEAR(ssim_y(x, x), 1.0, 1e-12);
}

TEST(Luma, Bt601Weights) {
  Tensor<double> x({1, 3, 1, 1});
  x[0] = 1.0, x[1] = 0.0, x[2] = 0.0;
  EXPECT_DOUBLE_EQ(luma(x)[0], 0.299);
  x[0] = 0.0, x[1] = 1.0;
  EXPECT_DOUBLE_EQ(luma(x)[0], 0.587);
  x[1] = 0.0, x[2] = 1.0;
  EXPECT_DOUBLE_EQ(luma(x)[0], 0.114);
}

TEST(Ssim, ConstantImagesClosedForm) {
  // Zero variance: SSIM = (2ab + C1) / (a^2 + b^2 + C1).
  Tensor<double> a({1, 3, 16, 16}), b({1, 3, 16, 16});
  a.fill(0.5);
  b.fill(0.6);
  const double c1 = 1e-4, expect = (2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
  EXPECT_NEAR(ssim_y(a, b), expect, 1e-12);
}

TEST(Ssim, BoundedOnRandomPairs) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    Tensor<double> a({1, 3, 16, 16}), b({1, 3, 16, 16});
    for (auto& v : a.data()) v = rng.uniform();
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = i % 2 ? 1.0 - a[k] : rng.uniform();
    const double s = ssim_y(a, b);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Metrics, RejectMismatchedShapes) {
  Tensor<float> a({1, 3, 16, 16}), b({1, 3, 16, 8});
  EXPECT_THROW(psnr_y(a, b), ShapeError);
  EXPECT_THROW(ssim_y(a, b), ShapeError);
}
