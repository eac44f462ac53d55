#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "ldsr/backbone.hpp"
#include "ldsr/tensor.hpp"

namespace ldsr {

inline constexpr double kEpsPrune = 1e-8;

/// Running sums F_i += omega * g_i^2 over K calibration steps.
class CalibAccumulator {
 public:
  /// One zero tensor per (name, shape).
  explicit CalibAccumulator(const std::vector<std::pair<std::string, Shape>>& params);
  /// Accumulator over every block parameter of `w` ("blocks.*").
  template <typename T>
  static CalibAccumulator for_blocks(const BackboneWeights<T>& w);

  /// `grads` must name exactly the accumulator's parameters.
  template <typename T>
  void accumulate(const std::vector<std::pair<std::string, const Tensor<T>*>>& grads, double omega);
  /// Divide by K. Throws if K == 0 or already finalized.
  void finalize();

  bool finalized() const { return finalized_; }
  std::size_t steps() const { return k_; }
  const std::map<std::string, Tensor<double>>& values() const { return f_; }
  const Tensor<double>& at(const std::string& name) const;

 private:
  std::map<std::string, Tensor<double>> f_;
  std::size_t k_ = 0;
  bool finalized_ = false;
};

/// sum w^2 / (F + eps_p) over one tensor.
template <typename T>
double saliency_term(const Tensor<T>& w, const Tensor<double>& f, double eps_p = kEpsPrune);

/// Per-block S_l over every parameter of block l. Requires a finalized
/// accumulator covering the blocks.
template <typename T>
std::vector<double> block_saliency(const BackboneWeights<T>& w, const CalibAccumulator& acc,
                                   double eps_p = kEpsPrune);

/// Greedy budgeted selection. Indices are 0-based; blocks 0 and L-1 are
/// always kept. Remaining blocks are visited by descending saliency (lower
/// index first on ties) and kept when P_fix + sum P_l stays <= P_star.
std::vector<std::size_t> select_blocks(const std::vector<double>& saliency,
                                       const std::vector<std::size_t>& sizes, std::size_t p_fix,
                                       std::size_t p_star);

/// Exhaustive optimum of sum S_l under the same constraints (L <= 16).
/// Ties go to the lexicographically smallest sorted index set.
std::vector<std::size_t> brute_force_select(const std::vector<double>& saliency,
                                            const std::vector<std::size_t>& sizes,
                                            std::size_t p_fix, std::size_t p_star);

struct ValidationReport {
  bool pass = true;
  std::map<std::string, double> relative_drop;  // (full - pruned) / |full|
  std::vector<std::string> failures;
};

/// Every metric is higher-is-better. Fails when a metric drops by more than
/// `threshold` relative, or when `budget_ok` is false. Throws if a metric of
/// `full` is missing from `pruned`.
ValidationReport validate_pruned(const std::map<std::string, double>& full,
                                 const std::map<std::string, double>& pruned,
                                 double threshold = 0.03, bool budget_ok = true);

struct PruneReport {
  std::string strategy = "saliency";
  std::vector<double> saliency;
  std::vector<std::size_t> sizes;
  std::size_t fixed = 0;
  std::size_t budget = 0;
  std::vector<std::size_t> kept;  // 0-based, ascending
  std::size_t total_params_before = 0;
  std::size_t total_params_after = 0;
  std::size_t calib_steps = 0;

  std::string to_json() const;
  nlohmann::json json() const;
  static PruneReport from_json(const nlohmann::json& j);
};

/// P_fix + round-down(keep_ratio * L) equal blocks, at least the endpoints.
std::size_t budget_for_ratio(const BackboneConfig& cfg, double keep_ratio);

/// Comparison baselines. All keep the endpoints and respect the budget.
enum class PruneStrategy { saliency, tail, random, magnitude };
const char* strategy_name(PruneStrategy s);

/// Drops the highest-index interior blocks first.
std::vector<std::size_t> select_tail(const std::vector<std::size_t>& sizes, std::size_t p_fix,
                                     std::size_t p_star);
/// Seeded random order over the interior blocks, then greedy fill.
std::vector<std::size_t> select_random(const std::vector<std::size_t>& sizes, std::size_t p_fix,
                                       std::size_t p_star, std::uint64_t seed);
/// Greedy on sum w^2 per block (curvature ignored).
template <typename T>
std::vector<std::size_t> select_magnitude(const BackboneWeights<T>& w, std::size_t p_fix,
                                          std::size_t p_star);

}  // namespace ldsr
