#include <gtest/gtest.h>

#include "ldsr/data.hpp"
#include "ldsr/metrics.hpp"

using namespace ldsr;

namespace {

Tensor<float> random_image(Rng& rng, std::size_t h, std::size_t w, std::size_t b = 1) {
  Tensor<float> x({b, 3, h, w});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  return x;
}

}  // namespace

TEST(Degradation, IdentityConfigReturnsInput) {
  Rng rng(1);
  const auto x = random_image(rng, 64, 64, 2);
  DegradationConfig cfg;
  cfg.blur_sigma_lo = cfg.blur_sigma_hi = 0.0;
  cfg.downscale = 1;
  cfg.noise_sigma_lo = cfg.noise_sigma_hi = 0.0;
  Rng r(5);
  EXPECT_EQ(synthesize_degradation(x, cfg, r), x);
}

TEST(Degradation, KeepsShapeAndRange) {
  Rng rng(2);
  const auto x = random_image(rng, 128, 96);
  Rng r(3);
  const auto y = synthesize_degradation(x, DegradationConfig{}, r);
  EXPECT_EQ(y.shape(), x.shape());
  for (float v : y.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_GT(max_abs_diff(x, y), 0.0f);
}

TEST(Degradation, FourXIsPiecewiseConstantWithoutBlurOrNoise) {
  Rng rng(3);
  const auto x = random_image(rng, 512, 512);
  DegradationConfig cfg;
  cfg.blur_sigma_lo = cfg.blur_sigma_hi = 0.0;
  cfg.noise_sigma_lo = cfg.noise_sigma_hi = 0.0;
  Rng r(1);
  const auto y = synthesize_degradation(x, cfg, r);
  const auto small = area_downsample(x, 4);
  ASSERT_EQ(small.dim(2), 128u);
  ASSERT_EQ(small.dim(3), 128u);
  // Each 4x4 cell holds the cell mean.
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 512; i += 37)
      for (std::size_t j = 0; j < 512; j += 41)
        EXPECT_FLOAT_EQ(y.at(0, c, i, j), small.at(0, c, i / 4, j / 4));
}

TEST(Degradation, SameSeedSameOutput) {
  Rng rng(4);
  const auto x = random_image(rng, 64, 64, 3);
  Rng a(9), b(9);
  EXPECT_EQ(synthesize_degradation(x, DegradationConfig{}, a), synthesize_degradation(x, DegradationConfig{}, b));
}

TEST(Degradation, ValidateRejectsBadRanges) {
  DegradationConfig cfg;
  cfg.downscale = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.noise_sigma_lo = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Blur, ConstantImageIsUnchanged) {
  Tensor<double> x({1, 3, 20, 17});
  x.fill(0.37);
  const auto y = gaussian_blur(x, 1.7);
  EXPECT_LT(max_abs_diff(x, y), 1e-12);
}

TEST(Blur, PreservesMeanOfSymmetricImpulseAwayFromBorder) {
  Tensor<double> x({1, 1, 41, 41});
  x.at(0, 0, 20, 20) = 1.0;
  const auto y = gaussian_blur(x, 2.0);
  EXPECT_NEAR(sum(y), 1.0, 1e-9);
  EXPECT_NEAR(y.at(0, 0, 20, 19), y.at(0, 0, 19, 20), 1e-15);
}

TEST(AreaDownsample, CellMeans) {
  Tensor<float> x({1, 1, 2, 4});
  for (std::size_t i = 0; i < 8; ++i) x[i] = static_cast<float>(i);
  const auto y = area_downsample(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_FLOAT_EQ(y[0], (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_FLOAT_EQ(y[1], (2 + 3 + 6 + 7) / 4.0f);
  EXPECT_THROW(area_downsample(x, 3), ShapeError);
}

TEST(ToyDataset, DistinctClampedDeterministic) {
  const auto a = generate_toy_dataset<float>(8, 64, 64, 1);
  const auto b = generate_toy_dataset<float>(8, 64, 64, 1);
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    for (float v : a[i].data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    for (std::size_t j = 0; j < i; ++j) {
      Tensor<float> d = a[i];
      axpy(-1.0f, a[j], d);
      EXPECT_GT(sum_squares(d), 0.0);
    }
  }
  EXPECT_NE(generate_toy_dataset<float>(1, 64, 64, 2)[0], a[0]);
}

TEST(ToyDataset, HasStructureAtSeveralScales) {
  const auto img = generate_toy_dataset<double>(1, 128, 128, 7)[0];
  Rng rng(1);
  DegradationConfig cfg;
  const auto lq = synthesize_degradation(img, cfg, rng);
  const double p = psnr_y(lq, img);
  EXPECT_LT(p, 45.0);  // degradation visibly removes detail
  EXPECT_GT(p, 15.0);
}

TEST(Batching, StackAndSplit) {
  Rng rng(6);
  const auto a = random_image(rng, 8, 8), b = random_image(rng, 8, 8);
  const auto s = stack_batch<float>({a, b});
  EXPECT_EQ(s.dim(0), 2u);
  EXPECT_EQ(batch_item(s, 0), a);
  EXPECT_EQ(batch_item(s, 1), b);
  Rng r(1);
  const auto c = random_crop(random_image(rng, 40, 50), 32, r);
  EXPECT_EQ(c.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_THROW(random_crop(a, 16, r), ShapeError);
}
