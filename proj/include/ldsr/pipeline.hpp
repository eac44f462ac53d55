#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "ldsr/checkpoint.hpp"
#include "ldsr/config.hpp"
#include "ldsr/pruner.hpp"
#include "ldsr/train.hpp"

namespace ldsr {

/// HQ training pool plus fixed degraded validation and test pairs.
struct ToyData {
  std::vector<Tensor<float>> train;
  std::vector<Tensor<float>> val_hq, val_lq;
  std::vector<Tensor<float>> test_hq, test_lq;
};

/// Deterministic in the data and degradation seeds.
ToyData make_toy_data(const RunConfig& cfg);

TrainContext<float> make_context(const RunConfig& cfg);

struct EvalRecord {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean total loss since the previous record
  EvalMetrics val;          // EMA adapters
  EvalMetrics raw;          // current adapters
};

struct TrainResult {
  Checkpoint best;
  std::size_t best_step = 0;
  bool best_is_ema = true;
  EvalMetrics best_val;
  EvalMetrics test;
  std::vector<EvalRecord> history;
  std::vector<StepRecord> steps;
};

using TrainProgress = std::function<void(const EvalRecord&)>;

/// Full training run: batches of random crops from the training pool,
/// degraded on the fly, one train_step each. Every eval_every steps and at
/// the end both the EMA and the current adapters are scored on the
/// validation set. The checkpoint keeps the adapters and EMA of the best
/// scoring step and deploys whichever of the two scored higher.
TrainResult train_run(const RunConfig& cfg, const ToyData& data, const TrainProgress& progress = {});

/// Calibration pairs for pruning: (HQ, LQ) batches of `calib_batch` images.
struct CalibSet {
  std::vector<Tensor<float>> hq;
  std::vector<Tensor<float>> lq;
};

/// One random crop of every training image, degraded with the prune seed.
CalibSet make_calib_set(const RunConfig& cfg, const ToyData& data);

struct PruneOutcome {
  PruneReport report;
  BackboneState<float> merged;
  BackboneState<float> pruned;
};

/// Merge adapters, accumulate F over K calibration steps of
/// omega(t) (rec + lambda_a align), score blocks, select under the budget
/// and drop the rest.
PruneOutcome run_prune_calibration(const BackboneState<float>& dense, const CalibSet& calib,
                                   const RunConfig& cfg, std::size_t budget);

/// Kept blocks for a strategy on a merged model. `saliency` is used only by
/// PruneStrategy::saliency.
std::vector<std::size_t> select_for_strategy(PruneStrategy s, const BackboneState<float>& merged,
                                             const std::vector<double>& saliency, std::size_t budget,
                                             std::uint64_t seed);

nlohmann::json metrics_json(const EvalMetrics& m);

}  // namespace ldsr
