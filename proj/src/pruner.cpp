#include "ldsr/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "ldsr/rng.hpp"

namespace ldsr {

CalibAccumulator::CalibAccumulator(const std::vector<std::pair<std::string, Shape>>& params) {
  for (const auto& [name, shape] : params) f_.emplace(name, Tensor<double>(shape));
}

template <typename T>
CalibAccumulator CalibAccumulator::for_blocks(const BackboneWeights<T>& w) {
  std::vector<std::pair<std::string, Shape>> p;
  for (const auto& [name, t] : w.named())
    if (name.rfind("blocks.", 0) == 0) p.emplace_back(name, t->shape());
  return CalibAccumulator(p);
}

template <typename T>
void CalibAccumulator::accumulate(const std::vector<std::pair<std::string, const Tensor<T>*>>& grads,
                                  double omega) {
  if (finalized_) throw std::logic_error("CalibAccumulator: already finalized");
  std::size_t matched = 0;
  for (const auto& [name, g] : grads) {
    auto it = f_.find(name);
    if (it == f_.end()) throw std::invalid_argument("CalibAccumulator: unknown parameter " + name);
    require_same_shape(it->second.shape(), g->shape(), "CalibAccumulator");
    ++matched;
  }
  if (matched != f_.size()) throw std::invalid_argument("CalibAccumulator: gradients do not cover every parameter");
  for (const auto& [name, g] : grads) {
    Tensor<double>& f = f_.at(name);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double v = static_cast<double>((*g)[i]);
      f[i] += omega * v * v;
    }
  }
  ++k_;
}

void CalibAccumulator::finalize() {
  if (finalized_) throw std::logic_error("CalibAccumulator: already finalized");
  if (k_ == 0) throw std::logic_error("CalibAccumulator: no calibration steps");
  const double inv = 1.0 / static_cast<double>(k_);
  for (auto& [name, f] : f_)
    for (auto& e : f.data()) e *= inv;
  finalized_ = true;
}

const Tensor<double>& CalibAccumulator::at(const std::string& name) const {
  auto it = f_.find(name);
  if (it == f_.end()) throw std::invalid_argument("CalibAccumulator: unknown parameter " + name);
  return it->second;
}

template <typename T>
double saliency_term(const Tensor<T>& w, const Tensor<double>& f, double eps_p) {
  require_same_shape(w.shape(), f.shape(), "saliency_term");
  if (!(eps_p > 0)) throw std::invalid_argument("saliency_term: eps_p must be positive");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = static_cast<double>(w[i]);
    s += v * v / (f[i] + eps_p);
  }
  return s;
}

template <typename T>
std::vector<double> block_saliency(const BackboneWeights<T>& w, const CalibAccumulator& acc,
                                   double eps_p) {
  if (!acc.finalized()) throw std::logic_error("block_saliency: accumulator not finalized");
  std::vector<double> s(w.blocks.size(), 0.0);
  for (std::size_t l = 0; l < w.blocks.size(); ++l)
    for (std::size_t p = 0; p < kNumBlockProj; ++p) {
      const std::string base = "blocks." + std::to_string(l) + "." + block_proj_name(p);
      s[l] += saliency_term(w.blocks[l].proj[p].w, acc.at(base + ".w"), eps_p);
      s[l] += saliency_term(w.blocks[l].proj[p].b, acc.at(base + ".b"), eps_p);
    }
  return s;
}

namespace {

void check_selection_inputs(const std::vector<double>* saliency, const std::vector<std::size_t>& sizes,
                            std::size_t p_fix, std::size_t p_star) {
  const std::size_t L = sizes.size();
  if (L < 2) throw std::invalid_argument("select_blocks: need at least 2 blocks");
  if (saliency && saliency->size() != L) throw std::invalid_argument("select_blocks: saliency/size length mismatch");
  if (p_fix + sizes.front() + sizes.back() > p_star) {
    throw std::invalid_argument("select_blocks: budget " + std::to_string(p_star) +
                                " cannot hold P_fix plus the first and last blocks");
  }
}

// Endpoints first, then `order` over the interior, adding what fits.
std::vector<std::size_t> greedy_fill(const std::vector<std::size_t>& order,
                                     const std::vector<std::size_t>& sizes, std::size_t p_fix,
                                     std::size_t p_star) {
  const std::size_t L = sizes.size();
  std::vector<std::size_t> kept{0, L - 1};
  std::size_t used = p_fix + sizes.front() + sizes.back();
  for (std::size_t l : order) {
    if (l == 0 || l == L - 1) continue;
    if (used + sizes[l] <= p_star) {
      kept.push_back(l);
      used += sizes[l];
    }
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<std::size_t> interior(std::size_t L) {
  std::vector<std::size_t> idx;
  for (std::size_t l = 1; l + 1 < L; ++l) idx.push_back(l);
  return idx;
}

}  // namespace

std::vector<std::size_t> select_blocks(const std::vector<double>& saliency,
                                       const std::vector<std::size_t>& sizes, std::size_t p_fix,
                                       std::size_t p_star) {
  check_selection_inputs(&saliency, sizes, p_fix, p_star);
  auto order = interior(sizes.size());
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return saliency[a] > saliency[b]; });
  return greedy_fill(order, sizes, p_fix, p_star);
}

std::vector<std::size_t> brute_force_select(const std::vector<double>& saliency,
                                            const std::vector<std::size_t>& sizes,
                                            std::size_t p_fix, std::size_t p_star) {
  check_selection_inputs(&saliency, sizes, p_fix, p_star);
  const std::size_t L = sizes.size();
  if (L > 16) throw std::invalid_argument("brute_force_select: L must be <= 16");
  std::vector<std::size_t> best;
  double best_score = -1.0;
  const std::size_t m = L - 2;
  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    std::vector<std::size_t> set{0};
    for (std::size_t j = 0; j < m; ++j)
      if (mask >> j & 1u) set.push_back(j + 1);
    set.push_back(L - 1);
    std::size_t used = p_fix;
    double score = 0.0;
    for (std::size_t l : set) {
      used += sizes[l];
      score += saliency[l];
    }
    if (used > p_star) continue;
    const double tol = 1e-12 * std::max(1.0, std::abs(best_score));
    if (score > best_score + tol || (std::abs(score - best_score) <= tol && set < best)) {
      best = set;
      best_score = score;
    }
  }
  return best;
}

ValidationReport validate_pruned(const std::map<std::string, double>& full,
                                 const std::map<std::string, double>& pruned, double threshold,
                                 bool budget_ok) {
  ValidationReport r;
  for (const auto& [name, v] : full) {
    auto it = pruned.find(name);
    if (it == pruned.end()) throw std::invalid_argument("validate_pruned: missing metric " + name);
    const double drop = (v - it->second) / std::abs(v);
    r.relative_drop[name] = drop;
    if (drop > threshold) {
      r.pass = false;
      r.failures.push_back(name);
    }
  }
  if (!budget_ok) {
    r.pass = false;
    r.failures.push_back("budget");
  }
  return r;
}

std::string PruneReport::to_json() const { return json().dump(2); }

nlohmann::json PruneReport::json() const {
  nlohmann::json j;
  j["strategy"] = strategy;
  j["saliency"] = saliency;
  j["sizes"] = sizes;
  j["fixed"] = fixed;
  j["budget"] = budget;
  j["kept"] = kept;
  j["total_params_before"] = total_params_before;
  j["total_params_after"] = total_params_after;
  j["calib_steps"] = calib_steps;
  return j;
}

PruneReport PruneReport::from_json(const nlohmann::json& j) {
  PruneReport r;
  r.strategy = j.at("strategy").get<std::string>();
  r.saliency = j.at("saliency").get<std::vector<double>>();
  r.sizes = j.at("sizes").get<std::vector<std::size_t>>();
  r.fixed = j.at("fixed").get<std::size_t>();
  r.budget = j.at("budget").get<std::size_t>();
  r.kept = j.at("kept").get<std::vector<std::size_t>>();
  r.total_params_before = j.at("total_params_before").get<std::size_t>();
  r.total_params_after = j.at("total_params_after").get<std::size_t>();
  r.calib_steps = j.at("calib_steps").get<std::size_t>();
  return r;
}

std::size_t budget_for_ratio(const BackboneConfig& cfg, double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw std::invalid_argument("budget_for_ratio: ratio must lie in (0, 1]");
  const auto keep = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::floor(keep_ratio * static_cast<double>(cfg.blocks) + 1e-9)));
  return fixed_param_count(cfg) + keep * block_param_count(cfg);
}

const char* strategy_name(PruneStrategy s) {
  switch (s) {
    case PruneStrategy::saliency: return "saliency";
    case PruneStrategy::tail: return "tail";
    case PruneStrategy::random: return "random";
    case PruneStrategy::magnitude: return "magnitude";
  }
  return "?";
}

std::vector<std::size_t> select_tail(const std::vector<std::size_t>& sizes, std::size_t p_fix,
                                     std::size_t p_star) {
  check_selection_inputs(nullptr, sizes, p_fix, p_star);
  return greedy_fill(interior(sizes.size()), sizes, p_fix, p_star);
}

std::vector<std::size_t> select_random(const std::vector<std::size_t>& sizes, std::size_t p_fix,
                                       std::size_t p_star, std::uint64_t seed) {
  check_selection_inputs(nullptr, sizes, p_fix, p_star);
  auto order = interior(sizes.size());
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return greedy_fill(order, sizes, p_fix, p_star);
}

template <typename T>
std::vector<std::size_t> select_magnitude(const BackboneWeights<T>& w, std::size_t p_fix,
                                          std::size_t p_star) {
  std::vector<double> mag(w.blocks.size(), 0.0);
  std::vector<std::size_t> sizes(w.blocks.size());
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    sizes[l] = w.block_params(l);
    for (const auto& lin : w.blocks[l].proj)
      mag[l] += static_cast<double>(sum_squares(lin.w)) + static_cast<double>(sum_squares(lin.b));
  }
  return select_blocks(mag, sizes, p_fix, p_star);
}

#define LDSR_PRUNE_INST(T)                                                                        \
  template CalibAccumulator CalibAccumulator::for_blocks(const BackboneWeights<T>&);              \
  template void CalibAccumulator::accumulate(                                                     \
      const std::vector<std::pair<std::string, const Tensor<T>*>>&, double);                      \
  template double saliency_term(const Tensor<T>&, const Tensor<double>&, double);                 \
  template std::vector<double> block_saliency(const BackboneWeights<T>&, const CalibAccumulator&, \
                                              double);                                            \
  template std::vector<std::size_t> select_magnitude(const BackboneWeights<T>&, std::size_t,      \
                                                     std::size_t);

LDSR_PRUNE_INST(float)
LDSR_PRUNE_INST(double)

}  // namespace ldsr
