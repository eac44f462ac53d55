#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ldsr/backbone.hpp"
#include "ldsr/config.hpp"
#include "ldsr/pruner.hpp"
#include "ldsr/tensor.hpp"

namespace ldsr {

inline constexpr char kCheckpointMagic[6] = {'L', 'D', 'S', 'R', '1', '\0'};
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw container: magic, u32 header length, JSON header, u32 tensor count,
/// then per tensor u32 name length, name, u32 rank, u64 dims, float32 data.
/// All integers little-endian.
struct CheckpointFile {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

void write_checkpoint_file(const std::string& path, const CheckpointFile& file);
/// Throws CheckpointError on bad magic, truncation, unknown version or
/// malformed records. Nothing is returned on failure.
CheckpointFile read_checkpoint_file(const std::string& path);

/// A model checkpoint: run configuration, f_theta parameters, the f_0
/// snapshot, optional adapters and their EMA, and the kept-block indices of
/// a pruned model (relative to the original depth).
struct Checkpoint {
  RunConfig config;
  BackboneState<float> state;
  std::optional<LoraSet<float>> ema;
  bool deploy_ema = true;  // inference uses the EMA adapters when present
  std::vector<std::size_t> kept;  // empty for dense models
  std::size_t original_blocks = 0;
  std::optional<PruneReport> prune;
  nlohmann::json extra = nlohmann::json::object();  // metrics, history
};

/// The state used for inference: EMA adapters when present and selected.
BackboneState<float> deployed_state(const Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ldsr
