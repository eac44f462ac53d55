#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ldsr/prompt.hpp"
#include "ldsr/tensor.hpp"

namespace ldsr {

enum class AttentionKind { linear, quadratic };

struct BackboneConfig {
  std::size_t blocks = 8;           // L
  std::size_t width = 128;          // d
  std::size_t heads = 4;
  std::size_t ffn_width = 256;      // d_ff
  std::size_t text_width = 64;      // d_t
  std::size_t text_tokens = 32;     // T_tok, used for MAC accounting
  std::size_t latent_channels = 32; // C_lat
  double eps_att = 0.0;             // 0 selects the dtype default
  std::size_t sched_T = 1000;
  AttentionKind attention = AttentionKind::linear;

  // Initialization of the seeded prior.
  std::uint64_t seed = 0xBAC4B04E;
  double pos_scale = 1.0;   // amplitude of the 2-D sinusoidal position table
  double mod_gain = 0.1;    // std multiplier of the modulation projections
  double out_gain = 0.01;   // std multiplier of the patch-out projection

  void validate() const;
  std::size_t head_dim() const { return width / heads; }
};

/// y = x W^T + b with W stored out x in.
template <typename T>
struct Linear {
  Tensor<T> w;
  Tensor<T> b;

  std::size_t in() const { return w.dim(1); }
  std::size_t out() const { return w.dim(0); }
  std::size_t params() const { return w.size() + b.size(); }
};

/// Projections of one block, in a fixed order shared with LoRA targets.
enum BlockProj : std::size_t {
  kSaQ, kSaK, kSaV, kSaO, kCaQ, kCaK, kCaV, kCaO, kFfIn, kFfOut, kMod, kNumBlockProj
};
const char* block_proj_name(std::size_t p);

template <typename T>
struct BlockWeights {
  std::array<Linear<T>, kNumBlockProj> proj;

  std::size_t params() const;
};

template <typename T>
struct BackboneWeights {
  Linear<T> patch_in, t_fc1, t_fc2, patch_out;
  std::vector<BlockWeights<T>> blocks;

  /// Parameters outside the blocks (P_fix). The position table is fixed and
  /// not a parameter.
  std::size_t fixed_params() const;
  std::size_t block_params(std::size_t l) const { return blocks.at(l).params(); }
  std::size_t total_params() const;

  /// Every tensor with a stable dotted name ("blocks.3.sa_q.w").
  std::vector<std::pair<std::string, Tensor<T>*>> named();
  std::vector<std::pair<std::string, const Tensor<T>*>> named() const;
  /// Zero tensors of matching shapes.
  BackboneWeights zeros_like() const;
};

struct LoraConfig {
  std::size_t rank = 64;
  double alpha = 64.0;
  bool ffn_targets = false;  // also adapt ff_in / ff_out
  std::uint64_t seed = 0x10BA;

  double scale() const { return alpha / static_cast<double>(rank); }
  bool targets(std::size_t proj) const;
};

/// Low-rank factors A (r x in) and B (out x r).
template <typename T>
struct LoraPair {
  Tensor<T> a;
  Tensor<T> b;
  bool active() const { return !a.empty(); }
};

template <typename T>
struct LoraSet {
  LoraConfig cfg;
  std::vector<std::array<LoraPair<T>, kNumBlockProj>> blocks;

  std::size_t params() const;
  std::vector<std::pair<std::string, Tensor<T>*>> named();
  std::vector<std::pair<std::string, const Tensor<T>*>> named() const;
  LoraSet zeros_like() const;
};

/// f_theta parameters, the immutable f_0 snapshot, and optional adapters.
template <typename T>
struct BackboneState {
  BackboneConfig cfg;
  BackboneWeights<T> params;
  std::shared_ptr<const BackboneWeights<T>> frozen;
  std::optional<LoraSet<T>> lora;

  static BackboneState init(const BackboneConfig& cfg);
  double eps_att() const;
};

/// Batch conditioning: one PromptCondition per sample, or a single one
/// shared by the whole batch.
template <typename T>
using CondBatch = std::vector<PromptCondition<T>>;

template <typename T>
struct ForwardPass;  // activation cache, defined in backbone.cpp

template <typename T>
struct ForwardResult {
  Tensor<T> out;  // B x C_lat x h x w
  std::shared_ptr<ForwardPass<T>> pass;
};

/// use_adapters=false evaluates f_0 from the frozen snapshot; true
/// evaluates f_theta = params + LoRA delta.
/// The state must outlive the result and stay unmodified until backward.
/// With record=false no activation cache is kept (inference/benchmarks).
template <typename T>
ForwardResult<T> forward(const BackboneState<T>& state, const Tensor<T>& z, double t,
                         const CondBatch<T>& cond, bool use_adapters, bool record = true);

struct BackwardRequest {
  bool params = false;  // f_theta base parameters
  bool lora = false;    // LoRA factors
  bool input = false;   // gradient w.r.t. z
};

template <typename T>
struct BackboneGrads {
  std::optional<BackboneWeights<T>> params;
  std::optional<LoraSet<T>> lora;
  std::optional<Tensor<T>> input;
};

/// Reverse pass for a cached forward. Parameter or LoRA gradients of an f_0
/// pass are refused.
template <typename T>
BackboneGrads<T> backward(const ForwardResult<T>& fwd, const Tensor<T>& grad_out,
                          const BackwardRequest& req);

/// Number of forward() evaluations in this thread.
std::uint64_t forward_calls();

/// z_hat = z_L - sigma(tau_g) * f_theta(z_L, tau_g, c, m).
template <typename T>
Tensor<T> one_step_restore(const BackboneState<T>& state, const Tensor<T>& z_l, double tau_g,
                           const CondBatch<T>& cond);

template <typename T>
void lora_inject(BackboneState<T>& state, const LoraConfig& cfg);
/// W <- W_0 + (alpha/r) B A for every target; adapters are removed.
template <typename T>
void lora_merge(BackboneState<T>& state);

/// Keeps the listed blocks (0-based, ascending, must contain 0 and L-1).
template <typename T>
BackboneState<T> remove_blocks(const BackboneState<T>& state, const std::vector<std::size_t>& keep);

std::size_t block_param_count(const BackboneConfig& cfg);
std::size_t fixed_param_count(const BackboneConfig& cfg);

/// Fixed 2-D sinusoidal position table (h*w x d).
template <typename T>
Tensor<T> position_table(std::size_t h, std::size_t w, std::size_t d, double amplitude);
/// Sinusoidal timestep embedding of width d.
template <typename T>
std::vector<T> timestep_embedding(double t, std::size_t d);

}  // namespace ldsr
