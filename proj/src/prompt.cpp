#include "ldsr/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ldsr/rng.hpp"

namespace ldsr {

template <typename T>
std::size_t PromptCondition<T>::active() const {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

TagTable TagTable::defaults() {
  TagTable t;
  t.buckets["luma"] = {"dark", "dim", "bright", "light"};
  t.buckets["edges"] = {"flat", "smooth", "textured"};
  t.buckets["hue"] = {"red", "yellow", "green", "cyan", "blue", "magenta"};
  return t;
}

TagTable TagTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("TagTable::load: cannot open " + path);
  TagTable t = defaults();
  std::string line;
  while (std::getline(in, line)) {
    if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
    std::istringstream ls(line);
    std::string cat, tag;
    std::size_t idx;
    if (!(ls >> cat)) continue;
    if (!(ls >> idx >> tag)) throw std::runtime_error("TagTable::load: malformed line: " + line);
    auto& v = t.buckets[cat];
    if (v.size() <= idx) v.resize(idx + 1);
    v[idx] = tag;
  }
  return t;
}

namespace {
std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}
}  // namespace

template <typename T>
Vocabulary<T>::Vocabulary(VocabConfig cfg, std::set<std::string> stoplist)
    : cfg_(cfg), stoplist_() {
  if (cfg_.size == 0 || cfg_.embed_dim == 0) throw std::invalid_argument("Vocabulary: empty config");
  for (const auto& w : stoplist) stoplist_.insert(lower(w));
  Rng rng(cfg_.seed);
  table_ = std::make_shared<const Tensor<T>>(gaussian_fill<T>(rng, {cfg_.size, cfg_.embed_dim}));
}

template <typename T>
std::set<std::string> Vocabulary<T>::default_stoplist() {
  return {"blurry", "noisy", "low-quality", "blur", "noise", "jpeg", "pixelated", "artifacts",
          "low-resolution", "compressed"};
}

template <typename T>
std::set<std::string> Vocabulary<T>::load_stoplist(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_stoplist: cannot open " + path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    auto e = line.find_last_not_of(" \t\r");
    out.insert(lower(std::string_view(line).substr(b, e - b + 1)));
  }
  return out;
}

template <typename T>
std::size_t Vocabulary<T>::token_id(std::string_view token) const {
  return static_cast<std::size_t>(fnv1a(token) % cfg_.size);
}

template <typename T>
std::span<const T> Vocabulary<T>::embedding(std::size_t id) const {
  return std::span<const T>(table_->ptr() + id * cfg_.embed_dim, cfg_.embed_dim);
}

template <typename T>
std::vector<std::string> extract_tags(const Tensor<T>& image, std::size_t b, const TagTable& table) {
  if (image.rank() != 4 || image.dim(1) != 3 || b >= image.dim(0)) {
    throw ShapeError("extract_tags: expected Bx3xHxW image");
  }
  const std::size_t H = image.dim(2), W = image.dim(3);
  double mr = 0, mg = 0, mb = 0, grad = 0;
  auto luma = [&](std::size_t y, std::size_t x) {
    return 0.299 * image.at(b, 0, y, x) + 0.587 * image.at(b, 1, y, x) + 0.114 * image.at(b, 2, y, x);
  };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      mr += image.at(b, 0, y, x);
      mg += image.at(b, 1, y, x);
      mb += image.at(b, 2, y, x);
      const double l = luma(y, x);
      if (x + 1 < W) grad += std::abs(luma(y, x + 1) - l);
      if (y + 1 < H) grad += std::abs(luma(y + 1, x) - l);
    }
  const double n = static_cast<double>(H * W);
  mr /= n, mg /= n, mb /= n, grad /= n;
  const double mean_luma = 0.299 * mr + 0.587 * mg + 0.114 * mb;

  std::vector<std::string> tags;
  auto emit = [&](const std::string& cat, std::size_t idx) {
    auto it = table.buckets.find(cat);
    if (it == table.buckets.end() || idx >= it->second.size() || it->second[idx].empty()) return;
    tags.push_back(it->second[idx]);
  };
  emit("luma", std::min<std::size_t>(3, static_cast<std::size_t>(mean_luma * 4.0)));
  emit("edges", grad < 0.01 ? 0 : (grad < 0.05 ? 1 : 2));

  const double mx = std::max({mr, mg, mb}), mn = std::min({mr, mg, mb});
  if (mx - mn >= 0.05) {
    double hue;  // degrees
    const double d = mx - mn;
    if (mx == mr) hue = 60.0 * std::fmod((mg - mb) / d + 6.0, 6.0);
    else if (mx == mg) hue = 60.0 * ((mb - mr) / d + 2.0);
    else hue = 60.0 * ((mr - mg) / d + 4.0);
    emit("hue", static_cast<std::size_t>(std::fmod(hue + 30.0, 360.0) / 60.0));
  }
  return tags;
}

std::string build_prompt(const std::vector<std::string>& tags, std::string_view tmpl) {
  if (tmpl.empty()) throw std::invalid_argument("build_prompt: empty template");
  std::string out;
  for (const auto& t : tags) {
    out += t;
    out += ", ";
  }
  out += tmpl;
  return out;
}

std::vector<std::string> tokenize(std::string_view prompt) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : prompt) {
    if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(lower(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(lower(cur));
  return out;
}

template <typename T>
PromptCondition<T> encode_prompt(std::string_view prompt, const Vocabulary<T>& vocab,
                                 std::size_t max_tokens) {
  if (max_tokens == 0) throw std::invalid_argument("encode_prompt: max_tokens must be >= 1");
  const auto tokens = tokenize(prompt);
  const std::size_t dt = vocab.config().embed_dim;
  PromptCondition<T> cond{Tensor<T>({max_tokens, dt}), std::vector<std::uint8_t>(max_tokens, 0)};
  for (std::size_t i = 0; i < max_tokens; ++i) {
    std::size_t id = vocab.pad_id();
    if (i < tokens.size()) {
      id = vocab.token_id(tokens[i]);
      cond.m[i] = vocab.stoplist().count(tokens[i]) ? 0 : 1;
    }
    auto row = vocab.embedding(id);
    std::copy(row.begin(), row.end(), cond.c.ptr() + i * dt);
  }
  if (cond.active() == 0) {
    throw std::invalid_argument("encode_prompt: prompt has no unmasked tokens: \"" +
                                std::string(prompt) + "\"");
  }
  return cond;
}

template struct PromptCondition<float>;
template struct PromptCondition<double>;
template class Vocabulary<float>;
template class Vocabulary<double>;
template std::vector<std::string> extract_tags(const Tensor<float>&, std::size_t, const TagTable&);
template std::vector<std::string> extract_tags(const Tensor<double>&, std::size_t, const TagTable&);
template PromptCondition<float> encode_prompt(std::string_view, const Vocabulary<float>&, std::size_t);
template PromptCondition<double> encode_prompt(std::string_view, const Vocabulary<double>&, std::size_t);

}  // namespace ldsr
