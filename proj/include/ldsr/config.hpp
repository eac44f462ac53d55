#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "ldsr/backbone.hpp"
#include "ldsr/codec.hpp"
#include "ldsr/data.hpp"
#include "ldsr/prompt.hpp"
#include "ldsr/train.hpp"

namespace ldsr {

/// Procedural train / validation / test split.
struct DataConfig {
  std::size_t train_images = 64;
  std::size_t train_size = 0;  // 0 selects crop + 32
  std::size_t val_images = 16;
  std::size_t test_images = 16;
  std::size_t eval_size = 128;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PruneConfig {
  std::size_t calib_steps = 400;  // K
  std::size_t calib_batch = 1;
  double keep_ratio = 0.75;
  std::uint64_t seed = 0xCA11B;

  void validate() const;
};

/// Everything a run needs. Every JSON field is optional.
struct RunConfig {
  BackboneConfig backbone;
  LoraConfig lora;
  CodecConfig codec;
  VocabConfig vocab;
  TrainConfig train;
  DegradationConfig degradation;
  DataConfig data;
  PruneConfig prune;
  std::string prompt_template{kQualityTemplate};

  void validate() const;

  /// Desk-scale preset used by the acceptance runs.
  static RunConfig toy();
};

nlohmann::json to_json(const RunConfig& cfg);
/// Fields absent from `j` keep the values of `base`. Unknown keys throw
/// std::invalid_argument.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base = {});
RunConfig load_run_config(const std::string& path, const RunConfig& base = {});

}  // namespace ldsr
