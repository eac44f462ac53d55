#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "ldsr/backbone.hpp"
#include "ldsr/checkpoint.hpp"
#include "ldsr/pipeline.hpp"
#include "ldsr/pruner.hpp"

namespace ldsr {

/// Closed-form multiply-accumulate counts of one restore of a single
/// H x W image: full codec encode + decode and one dense backbone forward
/// (adapters merged).
struct MacReport {
  std::uint64_t codec = 0;
  std::uint64_t patch = 0;      // patch-in and patch-out maps
  std::uint64_t timestep = 0;   // timestep MLP and per-block modulation
  std::uint64_t self_attn = 0;  // q/k/v/out projections and the attention kernel
  std::uint64_t cross_attn = 0;
  std::uint64_t ffn = 0;
  std::uint64_t total = 0;
  std::size_t tokens = 0;  // N
  std::size_t height = 0;
  std::size_t width = 0;
  BackboneConfig config;

  nlohmann::json json() const;
};

/// H and W must be multiples of 32.
MacReport mac_count(const BackboneConfig& cfg, std::size_t height, std::size_t width);
/// Backbone-only counts for an h x w token grid and an explicit prompt
/// length.
MacReport backbone_macs(const BackboneConfig& cfg, std::size_t grid_h, std::size_t grid_w,
                        std::size_t text_tokens);

struct BenchResult {
  std::vector<std::size_t> sizes;
  std::vector<double> times_linear;  // median ms per forward
  std::vector<double> times_quadratic;
  std::vector<double> ratios_linear;  // time(size[i+1]) / time(size[i])
  std::vector<double> ratios_quadratic;
  std::vector<std::uint64_t> macs_linear;
  std::size_t warmup = 0;
  std::size_t reps = 0;

  nlohmann::json json() const;
};

/// Median wall-clock of one backbone forward (batch 1, record=false) per N,
/// with linear and quadratic attention. Throws if a median is below the
/// timer's useful resolution.
BenchResult scaling_benchmark(const BackboneConfig& cfg, const std::vector<std::size_t>& sizes,
                              std::size_t warmup = 5, std::size_t reps = 20, bool quadratic = true);

/// Near-square token grid with h * w == n.
std::pair<std::size_t, std::size_t> grid_for_tokens(std::size_t n);

struct StrategyRow {
  std::string strategy;
  std::vector<std::size_t> kept;
  std::size_t params = 0;
  std::uint64_t macs = 0;
  double psnr_y = 0.0;
  double ssim_y = 0.0;
  double latency_ms = 0.0;
};

struct StrategyTable {
  std::vector<StrategyRow> rows;  // "full" first
  PruneReport calibration;

  nlohmann::json json() const;
  const StrategyRow& row(const std::string& strategy) const;
};

/// Prunes the checkpoint's deployed model to `budget` with each strategy and
/// scores it on the test split. Latency is the median over `reps` restores
/// of one test image after `warmup` runs.
StrategyTable compare_prune_strategies(const Checkpoint& ckpt, const ToyData& data, std::size_t budget,
                                       const std::vector<PruneStrategy>& strategies,
                                       std::size_t warmup = 5, std::size_t reps = 20);

}  // namespace ldsr
