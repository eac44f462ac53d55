#include <gtest/gtest.h>

#include <cmath>

#include "ldsr/schedule.hpp"

using namespace ldsr;

TEST(Schedule, Endpoints) {
  EXPECT_EQ(sigma(0, 1000), 0.0);
  EXPECT_EQ(alpha(0, 1000), 1.0);
  EXPECT_EQ(sigma(1000, 1000), 1.0);
  EXPECT_EQ(alpha(1000, 1000), 0.0);
  EXPECT_DOUBLE_EQ(sigma(900, 1000), 0.9);
  EXPECT_THROW(sigma(1001, 1000), std::out_of_range);
  EXPECT_THROW(alpha(-1, 1000), std::out_of_range);
}

TEST(Schedule, AlphaPlusSigmaIsOne) {
  for (int t = 0; t <= 1000; ++t) EXPECT_DOUBLE_EQ(alpha(t, 1000) + sigma(t, 1000), 1.0);
}

TEST(Schedule, OmegaDecreasing) {
  EXPECT_EQ(omega(0, 1000), 1.0);
  EXPECT_EQ(omega(1000, 1000), 0.0);
  for (int t = 1; t <= 1000; ++t) {
    ASSERT_LT(omega(t, 1000), omega(t - 1, 1000)) << t;
    ASSERT_GE(omega(t, 1000), 0.0);
  }
  EXPECT_THROW(omega(1200, 1000), std::out_of_range);
}

TEST(Perturb, Identities) {
  Rng rng(1);
  auto z = gaussian_fill<double>(rng, {1, 4, 2, 2});
  auto e = gaussian_fill<double>(rng, z.shape());
  EXPECT_EQ(perturb(z, 0, e, 1000), z);
  EXPECT_EQ(perturb(Tensor<double>(z.shape()), 1000, e, 1000), e);
  auto b = gaussian_fill<double>(rng, z.shape());
  Tensor<double> expect = perturb(z, 417, e, 1000);
  axpy(alpha(417, 1000), b, expect);
  EXPECT_LT(max_abs_diff(perturb(add(z, b), 417, e, 1000), expect), 1e-14);
  EXPECT_THROW(perturb(z, 10, Tensor<double>({1, 4, 2, 1}), 1000), ShapeError);
}

TEST(SampleTimestep, DegenerateRange) {
  Rng rng(2);
  SchedulerConfig c;
  c.t_min = c.t_max = 300;
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_timestep(rng, c), 300);
}

TEST(SampleTimestep, UniformDeciles) {
  Rng rng(3);
  const SchedulerConfig c;
  const int n = 100000;
  const double width = static_cast<double>(c.t_max - c.t_min + 1);
  std::vector<int> hist(10, 0);
  for (int i = 0; i < n; ++i) {
    const auto t = sample_timestep(rng, c);
    ASSERT_GE(t, c.t_min);
    ASSERT_LE(t, c.t_max);
    ++hist[static_cast<std::size_t>(static_cast<double>(t - c.t_min) / width * 10.0)];
  }
  // 581 values do not split evenly into deciles; compare each bin to its own count.
  std::vector<int> values(10, 0);
  for (auto t = c.t_min; t <= c.t_max; ++t)
    ++values[static_cast<std::size_t>(static_cast<double>(t - c.t_min) / width * 10.0)];
  for (std::size_t d = 0; d < 10; ++d) {
    const double p = values[d] / width;
    const double sd = std::sqrt(n * p * (1 - p));
    EXPECT_LT(std::abs(hist[d] - n * p), 3 * sd) << "decile " << d;
  }
}

TEST(SchedulerConfig, Presets) {
  const auto hq = SchedulerConfig::hq_preset();
  EXPECT_EQ(hq.tau_g, 900);
  EXPECT_EQ(hq.t_min, 70);
  EXPECT_EQ(hq.t_max, 650);
  const auto lq = SchedulerConfig::lq_preset();
  EXPECT_EQ(lq.tau_g, 999);
  EXPECT_EQ(lq.t_min, 20);
  EXPECT_EQ(lq.t_max, 980);
  SchedulerConfig bad;
  bad.t_min = 700;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(NoisePair, OneDrawSharedNoise) {
  Rng rng(4);
  auto zh = gaussian_fill<float>(rng, {2, 4, 3, 3});
  auto zhat = gaussian_fill<float>(rng, zh.shape());
  const auto fills = rng.gaussian_fills(), ints = rng.int_draws();
  auto p = build_noise_pair(zhat, zh, rng, SchedulerConfig{});
  EXPECT_EQ(rng.gaussian_fills(), fills + 1);
  EXPECT_EQ(rng.int_draws(), ints + 1);
  EXPECT_GE(p.t, 70);
  EXPECT_LE(p.t, 650);
  EXPECT_EQ(p.z_tilde_hat, perturb(zhat, static_cast<double>(p.t), p.eps, 1000.0));
  EXPECT_EQ(p.z_tilde_h, perturb(zh, static_cast<double>(p.t), p.eps, 1000.0));
  EXPECT_THROW(build_noise_pair(zhat, Tensor<float>({1, 4, 3, 3}), rng, SchedulerConfig{}),
               ShapeError);
}
