#include <gtest/gtest.h>

#include <cmath>

#include "ldsr/grad_check.hpp"
#include "ldsr/rng.hpp"
#include "ldsr/tensor.hpp"

using namespace ldsr;

TEST(Matmul, IdentityAndZeros) {
  Rng rng(1);
  auto x = gaussian_fill<double>(rng, {3, 5});
  EXPECT_EQ(matmul(Tensor<double>::identity(3), x), x);
  EXPECT_EQ(max_abs(matmul(Tensor<double>({2, 3}), x)), 0.0);
}

TEST(Matmul, HandExample) {
  auto a = Tensor<double>::from_rows({{1, 2}, {3, 4}});
  auto b = Tensor<double>::from_rows({{0}, {1}});
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.at(0, 0), 2.0);
  EXPECT_EQ(c.at(1, 0), 4.0);
}

TEST(Matmul, TransposedVariantsAgree) {
  Rng rng(2);
  auto a = gaussian_fill<double>(rng, {4, 6});
  auto b = gaussian_fill<double>(rng, {5, 6});
  EXPECT_LT(max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))), 1e-14);
  auto c = gaussian_fill<double>(rng, {4, 3});
  EXPECT_LT(max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)), 1e-14);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor<float>({2, 3}), Tensor<float>({2, 3})), ShapeError);
}

TEST(Matmul, CountsMacs) {
  reset_mac_counter();
  matmul(Tensor<float>({4, 5}), Tensor<float>({5, 6}));
  EXPECT_EQ(mac_counter(), 4u * 5u * 6u);
}

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
}

TEST(Tensor, NonFiniteDetected) {
  Tensor<double> t({3});
  EXPECT_NO_THROW(check_finite(t, "t"));
  t[1] = std::nan("");
  EXPECT_THROW(check_finite(t, "t"), NonFiniteError);
  t[1] = INFINITY;
  EXPECT_FALSE(all_finite(t));
}

TEST(Rng, GaussianDeterministic) {
  Rng a(7), b(7);
  EXPECT_EQ(gaussian_fill<float>(a, {64}), gaussian_fill<float>(b, {64}));
  Rng c(8);
  Rng d(7);
  EXPECT_NE(gaussian_fill<float>(c, {64}), gaussian_fill<float>(d, {64}));
}

TEST(Rng, GaussianMoments) {
  Rng rng(123);
  auto x = gaussian_fill<double>(rng, {1000000});
  const double mean = sum(x) / 1e6;
  double var = 0.0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= 1e6;
  EXPECT_LT(std::abs(mean), 0.01);
  EXPECT_LT(std::abs(var - 1.0), 0.02);
}

TEST(Rng, UniformIntBounds) {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const auto v = rng.uniform_int(-2, 5);
    ASSERT_GE(v, -2);
    ASSERT_LE(v, 5);
  }
  EXPECT_EQ(rng.int_draws(), 10000u);
}

TEST(FiniteDiff, Square) {
  Tensor<double> x({1}, 3.0);
  auto g = finite_diff_grad([](const Tensor<double>& t) { return t[0] * t[0]; }, x);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, SumGivesOnes) {
  Rng rng(4);
  auto x = gaussian_fill<double>(rng, {3, 4});
  auto g = finite_diff_grad([](const Tensor<double>& t) { return sum(t); }, x);
  for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDiff, NonFiniteThrows) {
  Tensor<double> x({2}, 0.0);
  EXPECT_THROW(finite_diff_grad([](const Tensor<double>& t) { return 1.0 / t[0]; }, x),
               NonFiniteError);
}
