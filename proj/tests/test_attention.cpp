#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "ldsr/attention.hpp"
#include "ldsr/grad_check.hpp"
#include "ldsr/rng.hpp"

using namespace ldsr;

TEST(LinearAttention, SingleTokenNormalization) {
  auto q = Tensor<double>::from_rows({{0.5, 2.0, -1.0}});
  auto k = Tensor<double>::from_rows({{1.0, 0.25, 3.0}});
  auto v = Tensor<double>::from_rows({{4.0, -2.0, 7.0}});
  const double eps = 0.1;
  const double s = 0.5 * 1.0 + 2.0 * 0.25;  // negative coordinates clipped
  auto out = linear_attention(q, k, v, eps);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out[c], v[c] * s / (s + eps), 1e-15);
  auto ref = quadratic_reference_attention(q, k, v, eps);
  EXPECT_LT(max_abs_diff(out, ref), 1e-15);
}

TEST(LinearAttention, ZeroQueryGivesZero) {
  Rng rng(3);
  auto k = gaussian_fill<double>(rng, {6, 4});
  auto v = gaussian_fill<double>(rng, {6, 4});
  auto out = linear_attention(Tensor<double>({6, 4}), k, v, 1e-12);
  EXPECT_EQ(max_abs(out), 0.0);
}

TEST(LinearAttention, MatchesQuadraticReferenceFloat) {
  Rng rng(11);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(0, 31));
    auto q = gaussian_fill<float>(rng, {n, 8});
    auto k = gaussian_fill<float>(rng, {n, 8});
    auto v = gaussian_fill<float>(rng, {n, 8});
    auto a = linear_attention(q, k, v, 1e-6);
    auto b = quadratic_reference_attention(q, k, v, 1e-6);
    EXPECT_LT(max_abs_diff(a, b), 1e-5f) << "instance " << inst << " n=" << n;
  }
}

TEST(LinearAttention, NonnegativeInputsN8) {
  Rng rng(5);
  Tensor<float> q({8, 4}), k({8, 4}), v({8, 4});
  for (auto* t : {&q, &k, &v})
    for (auto& e : t->data()) e = static_cast<float>(rng.uniform());
  EXPECT_LT(max_abs_diff(linear_attention(q, k, v, 1e-6), quadratic_reference_attention(q, k, v, 1e-6)),
            1e-5f);
}

TEST(LinearAttention, MatchesQuadraticReferenceDouble) {
  Rng rng(12);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(0, 31));
    auto q = gaussian_fill<double>(rng, {n, 6});
    auto k = gaussian_fill<double>(rng, {n, 6});
    auto v = gaussian_fill<double>(rng, {n, 6});
    EXPECT_LT(max_abs_diff(linear_attention(q, k, v, 1e-12),
                           quadratic_reference_attention(q, k, v, 1e-12)),
              1e-10);
  }
}

TEST(LinearAttention, PermutationEquivariance) {
  Rng rng(8);
  const std::size_t n = 12;
  auto q = gaussian_fill<double>(rng, {n, 4});
  auto k = gaussian_fill<double>(rng, {n, 4});
  auto v = gaussian_fill<double>(rng, {n, 4});
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[2], perm[7]);
  auto permute = [&](const Tensor<double>& x) {
    Tensor<double> y(x.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 4; ++c) y.at(i, c) = x.at(perm[i], c);
    return y;
  };
  auto lin = linear_attention(q, k, v, 1e-12);
  auto quad = quadratic_reference_attention(q, k, v, 1e-12);
  EXPECT_LT(max_abs_diff(permute(lin), linear_attention(permute(q), permute(k), permute(v), 1e-12)), 1e-12);
  EXPECT_LT(max_abs_diff(permute(quad),
                         quadratic_reference_attention(permute(q), permute(k), permute(v), 1e-12)),
            1e-12);
}

TEST(LinearAttention, RejectsBadInput) {
  Tensor<double> a({3, 2}), b({4, 2});
  EXPECT_THROW(linear_attention(a, b, b, 1e-6), ShapeError);
  EXPECT_THROW(linear_attention(a, a, a, 0.0), std::invalid_argument);
}

TEST(LinearAttention, BackwardMatchesFiniteDifferences) {
  Rng rng(21);
  const std::size_t n = 7, dh = 3;
  // Shift queries/keys away from the ReLU kink so central differences are smooth.
  auto shifted = [&](double lo) {
    Tensor<double> t({n, dh});
    for (auto& e : t.data()) e = (rng.uniform() < 0.3 ? -1.0 : 1.0) * rng.uniform(lo, 1.5);
    return t;
  };
  auto q = shifted(0.1), k = shifted(0.1);
  auto v = gaussian_fill<double>(rng, {n, dh});
  auto w = gaussian_fill<double>(rng, {n, dh});
  const double eps = 1e-3;

  auto loss = [&](const Tensor<double>& qq, const Tensor<double>& kk, const Tensor<double>& vv) {
    return dot(linear_attention(qq, kk, vv, eps), w);
  };
  Tensor<double> pq = q, pk = k;
  for (auto& e : pq.data()) e = std::max(e, 0.0);
  for (auto& e : pk.data()) e = std::max(e, 0.0);
  std::vector<double> kv(dh * dh), ksum(dh), den(n);
  Tensor<double> out({n, dh}), dq({n, dh}), dk({n, dh}), dv({n, dh});
  kernels::linear_attn_fwd(n, dh, pq.ptr(), pk.ptr(), v.ptr(), dh, eps, out.ptr(), dh, kv.data(),
                           ksum.data(), den.data());
  kernels::linear_attn_bwd(n, dh, pq.ptr(), pk.ptr(), v.ptr(), dh, kv.data(), ksum.data(),
                           den.data(), out.ptr(), w.ptr(), dh, dq.ptr(), dk.ptr(), dv.ptr());
  for (std::size_t i = 0; i < n * dh; ++i) {
    if (q[i] <= 0) dq[i] = 0;
    if (k[i] <= 0) dk[i] = 0;
  }
  EXPECT_LT(max_relative_error(dq, finite_diff_grad([&](const auto& x) { return loss(x, k, v); }, q)), 1e-6);
  EXPECT_LT(max_relative_error(dk, finite_diff_grad([&](const auto& x) { return loss(q, x, v); }, k)), 1e-6);
  EXPECT_LT(max_relative_error(dv, finite_diff_grad([&](const auto& x) { return loss(q, k, x); }, v)), 1e-6);
}

TEST(MaskedSoftmax, SingleUnmaskedTokenReturnsItsValue) {
  Rng rng(4);
  auto q = gaussian_fill<double>(rng, {5, 4});
  auto k = gaussian_fill<double>(rng, {3, 4});
  auto v = gaussian_fill<double>(rng, {3, 4});
  auto out = masked_softmax_attention(q, k, v, {0, 1, 0});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(out.at(i, c), v.at(1, c));
}

TEST(MaskedSoftmax, ZeroQueryAveragesUnmaskedValues) {
  Rng rng(6);
  auto k = gaussian_fill<double>(rng, {4, 3});
  auto v = gaussian_fill<double>(rng, {4, 3});
  auto out = masked_softmax_attention(Tensor<double>({2, 3}), k, v, {1, 0, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = (v.at(0, c) + v.at(2, c) + v.at(3, c)) / 3.0;
    EXPECT_NEAR(out.at(0, c), mean, 1e-14);
  }
}

TEST(MaskedSoftmax, MaskedRowsDoNotMatter) {
  Rng rng(9);
  auto q = gaussian_fill<double>(rng, {6, 4});
  auto k = gaussian_fill<double>(rng, {5, 4});
  auto v = gaussian_fill<double>(rng, {5, 4});
  std::vector<std::uint8_t> m{1, 0, 1, 0, 0};
  auto ref = masked_softmax_attention(q, k, v, m);
  for (std::size_t j : {1u, 3u, 4u})
    for (std::size_t c = 0; c < 4; ++c) {
      k.at(j, c) = 100.0 * rng.normal();
      v.at(j, c) = 100.0 * rng.normal();
    }
  EXPECT_LT(max_abs_diff(ref, masked_softmax_attention(q, k, v, m)), 1e-6);
  EXPECT_THROW(masked_softmax_attention(q, k, v, {0, 0, 0, 0, 0}), std::invalid_argument);
}

TEST(MaskedSoftmax, BackwardMatchesFiniteDifferences) {
  Rng rng(31);
  const std::size_t n = 4, nt = 5, dh = 3;
  auto q = gaussian_fill<double>(rng, {n, dh});
  auto k = gaussian_fill<double>(rng, {nt, dh});
  auto v = gaussian_fill<double>(rng, {nt, dh});
  auto w = gaussian_fill<double>(rng, {n, dh});
  std::vector<std::uint8_t> m{1, 1, 0, 1, 0};
  auto loss = [&](const Tensor<double>& qq, const Tensor<double>& kk, const Tensor<double>& vv) {
    return dot(masked_softmax_attention(qq, kk, vv, m), w);
  };
  Tensor<double> out({n, dh}), dq({n, dh}), dk({nt, dh}), dv({nt, dh});
  std::vector<double> probs(n * nt);
  kernels::masked_softmax_fwd(n, nt, dh, q.ptr(), dh, k.ptr(), v.ptr(), dh, m.data(), out.ptr(), dh,
                              probs.data());
  kernels::masked_softmax_bwd(n, nt, dh, q.ptr(), dh, k.ptr(), v.ptr(), dh, probs.data(), w.ptr(),
                              dh, dq.ptr(), dk.ptr(), dv.ptr());
  EXPECT_LT(max_relative_error(dq, finite_diff_grad([&](const auto& x) { return loss(x, k, v); }, q)), 1e-6);
  EXPECT_LT(max_relative_error(dk, finite_diff_grad([&](const auto& x) { return loss(q, x, v); }, k)), 1e-6);
  EXPECT_LT(max_relative_error(dv, finite_diff_grad([&](const auto& x) { return loss(q, k, x); }, v)), 1e-6);
}
