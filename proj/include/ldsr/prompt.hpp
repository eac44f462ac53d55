#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ldsr/tensor.hpp"

namespace ldsr {

inline constexpr std::string_view kQualityTemplate =
    "clean, sharp, best quality, detailed, 8K, high-resolution";
inline constexpr std::string_view kQualityTemplateAlt =
    "clean, extremely detailed, best quality, sharp, high-resolution";

/// Text condition for cross-attention: embeddings c (T_tok x d_t) and a
/// binary mask m. Masked rows stay populated; masking happens in attention.
template <typename T>
struct PromptCondition {
  Tensor<T> c;
  std::vector<std::uint8_t> m;

  std::size_t tokens() const { return m.size(); }
  std::size_t active() const;
};

/// Statistic buckets -> tag words. Categories: "luma" (4 buckets by mean
/// luminance), "edges" (3 buckets by mean gradient magnitude), "hue" (6
/// buckets by dominant hue; omitted for near-gray images).
struct TagTable {
  std::map<std::string, std::vector<std::string>> buckets;

  static TagTable defaults();
  /// Lines of `category index tag`; '#' starts a comment.
  static TagTable load(const std::string& path);
};

struct VocabConfig {
  std::size_t size = 4096;  // V
  std::size_t embed_dim = 64;  // d_t
  std::uint64_t seed = 0x7E47;
};

/// Frozen hashed vocabulary with a seeded embedding table and a stoplist of
/// degradation words that are masked out of the condition.
template <typename T>
class Vocabulary {
 public:
  explicit Vocabulary(VocabConfig cfg = {}, std::set<std::string> stoplist = default_stoplist());

  static std::set<std::string> default_stoplist();
  /// One word per line.
  static std::set<std::string> load_stoplist(const std::string& path);

  const VocabConfig& config() const { return cfg_; }
  const std::set<std::string>& stoplist() const { return stoplist_; }
  std::size_t token_id(std::string_view token) const;
  std::size_t pad_id() const { return token_id("<pad>"); }
  /// Row `id` of the embedding table.
  std::span<const T> embedding(std::size_t id) const;

 private:
  VocabConfig cfg_;
  std::set<std::string> stoplist_;
  std::shared_ptr<const Tensor<T>> table_;  // V x d_t
};

/// Deterministic content tags for image `b` of a B x 3 x H x W tensor.
template <typename T>
std::vector<std::string> extract_tags(const Tensor<T>& image, std::size_t b = 0,
                                      const TagTable& table = TagTable::defaults());

/// Comma-joined tags, then ", ", then the template.
std::string build_prompt(const std::vector<std::string>& tags, std::string_view tmpl);

/// Lower-cased tokens split on whitespace and commas.
std::vector<std::string> tokenize(std::string_view prompt);

/// Tokenize, embed and pad/truncate to `max_tokens`. Mask is 1 on real,
/// non-stoplisted tokens. Throws if no token survives.
template <typename T>
PromptCondition<T> encode_prompt(std::string_view prompt, const Vocabulary<T>& vocab,
                                 std::size_t max_tokens = 32);

}  // namespace ldsr
