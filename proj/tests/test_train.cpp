#include <gtest/gtest.h>

#include "ldsr/metrics.hpp"
#include "support.hpp"

using namespace ldsr;
using ldsr::testing::TinyTrainProblem;

TEST(TrainObjective, LoraGradientMatchesFiniteDifferences) {
  TinyTrainProblem p;
  const auto lg = loss_and_lora_grad(p.state, p.x_h, p.x_l, p.ctx, p.cfg, p.t, p.eps);
  EXPECT_GT(lg.parts.rec, 0.0);
  EXPECT_GT(lg.parts.align, 0.0);
  EXPECT_GT(lg.parts.cons, 0.0);
  auto [worst, name] = ldsr::testing::total_loss_grad_error(p);
  EXPECT_LT(worst, 1e-4) << name;
}

TEST(TrainObjective, DetachOnlyAffectsPriorBranches) {
  TinyTrainProblem p(false);
  p.cfg.weights.lambda_a = p.cfg.weights.lambda_c = 0.0;
  const auto a = loss_and_lora_grad(p.state, p.x_h, p.x_l, p.ctx, p.cfg, p.t, p.eps);
  p.cfg.detach_align = true;
  const auto b = loss_and_lora_grad(p.state, p.x_h, p.x_l, p.ctx, p.cfg, p.t, p.eps);
  const auto ga = a.grad.named(), gb = b.grad.named();
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_EQ(*ga[i].second, *gb[i].second) << ga[i].first;

  p.cfg.weights = LossWeights{};
  const auto c = loss_and_lora_grad(p.state, p.x_h, p.x_l, p.ctx, p.cfg, p.t, p.eps);
  p.cfg.detach_align = false;
  const auto d = loss_and_lora_grad(p.state, p.x_h, p.x_l, p.ctx, p.cfg, p.t, p.eps);
  EXPECT_EQ(c.total, d.total);
  double diff = 0.0;
  const auto gc = c.grad.named(), gd = d.grad.named();
  for (std::size_t i = 0; i < gc.size(); ++i) diff = std::max(diff, max_abs_diff(*gc[i].second, *gd[i].second));
  EXPECT_GT(diff, 0.0);
}
