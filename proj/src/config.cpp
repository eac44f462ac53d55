#include "ldsr/config.hpp"

#include <fstream>
#include <map>
#include <type_traits>
#include <set>
#include <stdexcept>

namespace ldsr {

using nlohmann::json;

void DataConfig::validate() const {
  if (train_images == 0 || val_images == 0 || test_images == 0) {
    throw std::invalid_argument("DataConfig: image counts must be positive");
  }
  if (eval_size == 0 || eval_size % kPatch != 0) {
    throw std::invalid_argument("DataConfig: eval_size must be a positive multiple of 32");
  }
}

void PruneConfig::validate() const {
  if (calib_steps == 0 || calib_batch == 0) throw std::invalid_argument("PruneConfig: K and batch must be positive");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw std::invalid_argument("PruneConfig: keep_ratio must be in (0, 1]");
}

void RunConfig::validate() const {
  backbone.validate();
  train.validate();
  degradation.validate();
  data.validate();
  prune.validate();
  if (codec.latent_channels != backbone.latent_channels) {
    throw std::invalid_argument("RunConfig: codec and backbone latent channels differ");
  }
  if (vocab.embed_dim != backbone.text_width) {
    throw std::invalid_argument("RunConfig: vocabulary embedding width must equal backbone text_width");
  }
  if (data.train_size != 0 && data.train_size < train.crop) {
    throw std::invalid_argument("RunConfig: train_size smaller than crop");
  }
}

RunConfig RunConfig::toy() {
  RunConfig c;
  c.train.crop = 128;
  c.train.lr = 1e-3;
  c.train.eval_every = 100;
  return c;
}

namespace {

// Field visitors shared by serialization and parsing.
template <typename V>
void visit_backbone(V& v, BackboneConfig& c) {
  v("blocks", c.blocks);
  v("width", c.width);
  v("heads", c.heads);
  v("ffn_width", c.ffn_width);
  v("text_width", c.text_width);
  v("text_tokens", c.text_tokens);
  v("latent_channels", c.latent_channels);
  v("eps_att", c.eps_att);
  v("sched_T", c.sched_T);
  v("attention", c.attention);
  v("seed", c.seed);
  v("pos_scale", c.pos_scale);
  v("mod_gain", c.mod_gain);
  v("out_gain", c.out_gain);
}

template <typename V>
void visit_lora(V& v, LoraConfig& c) {
  v("rank", c.rank);
  v("alpha", c.alpha);
  v("ffn_targets", c.ffn_targets);
  v("seed", c.seed);
}

template <typename V>
void visit_codec(V& v, CodecConfig& c) {
  v("seed", c.seed);
  v("latent_channels", c.latent_channels);
  v("latent_scale", c.latent_scale);
}

template <typename V>
void visit_vocab(V& v, VocabConfig& c) {
  v("size", c.size);
  v("embed_dim", c.embed_dim);
  v("seed", c.seed);
}

template <typename V>
void visit_weights(V& v, LossWeights& c) {
  v("lambda2", c.lambda2);
  v("lambda_p", c.lambda_p);
  v("lambda_a", c.lambda_a);
  v("lambda_c", c.lambda_c);
}

template <typename V>
void visit_sched(V& v, SchedulerConfig& c) {
  v("T", c.T);
  v("tau_g", c.tau_g);
  v("t_min", c.t_min);
  v("t_max", c.t_max);
}

template <typename V>
void visit_train(V& v, TrainConfig& c) {
  v("steps", c.steps);
  v("batch", c.batch);
  v("crop", c.crop);
  v("lr", c.lr);
  v("weight_decay", c.weight_decay);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("adam_eps", c.adam_eps);
  v("grad_clip", c.grad_clip);
  v("ema_decay", c.ema_decay);
  v.section("weights", [&](V& sub) { visit_weights(sub, c.weights); });
  v.section("sched", [&](V& sub) { visit_sched(sub, c.sched); });
  v("detach_align", c.detach_align);
  v("hq_prompt_source", c.hq_prompt_source);
  v("eval_every", c.eval_every);
  v("seed", c.seed);
}

template <typename V>
void visit_degradation(V& v, DegradationConfig& c) {
  v("blur_sigma_lo", c.blur_sigma_lo);
  v("blur_sigma_hi", c.blur_sigma_hi);
  v("downscale", c.downscale);
  v("noise_sigma_lo", c.noise_sigma_lo);
  v("noise_sigma_hi", c.noise_sigma_hi);
  v("seed", c.seed);
}

template <typename V>
void visit_data(V& v, DataConfig& c) {
  v("train_images", c.train_images);
  v("train_size", c.train_size);
  v("val_images", c.val_images);
  v("test_images", c.test_images);
  v("eval_size", c.eval_size);
  v("seed", c.seed);
}

template <typename V>
void visit_prune(V& v, PruneConfig& c) {
  v("calib_steps", c.calib_steps);
  v("calib_batch", c.calib_batch);
  v("keep_ratio", c.keep_ratio);
  v("seed", c.seed);
}

template <typename V>
void visit_run(V& v, RunConfig& c) {
  v.section("backbone", [&](V& s) { visit_backbone(s, c.backbone); });
  v.section("lora", [&](V& s) { visit_lora(s, c.lora); });
  v.section("codec", [&](V& s) { visit_codec(s, c.codec); });
  v.section("vocab", [&](V& s) { visit_vocab(s, c.vocab); });
  v.section("train", [&](V& s) { visit_train(s, c.train); });
  v.section("degradation", [&](V& s) { visit_degradation(s, c.degradation); });
  v.section("data", [&](V& s) { visit_data(s, c.data); });
  v.section("prune", [&](V& s) { visit_prune(s, c.prune); });
  v("prompt_template", c.prompt_template);
}

const char* attention_name(AttentionKind k) { return k == AttentionKind::linear ? "linear" : "quadratic"; }

struct Writer {
  json j = json::object();

  template <typename F>
  void operator()(const char* key, const F& field) {
    if constexpr (std::is_same_v<F, AttentionKind>) j[key] = attention_name(field);
    else j[key] = field;
  }
  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    Writer sub;
    fn(sub);
    j[key] = std::move(sub.j);
  }
};

struct Reader {
  const json& j;
  std::string path;

  template <typename F>
  void operator()(const char* key, F& field) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    try {
      if constexpr (std::is_same_v<F, AttentionKind>) {
        const auto s = v.get<std::string>();
        if (s == "linear") field = AttentionKind::linear;
        else if (s == "quadratic") field = AttentionKind::quadratic;
        else throw std::invalid_argument("expected linear or quadratic");
      } else if constexpr (std::is_unsigned_v<F> && !std::is_same_v<F, bool>) {
        if (!v.is_number_unsigned()) throw std::invalid_argument("expected a nonnegative integer");
        field = v.get<F>();
      } else if constexpr (std::is_integral_v<F> && !std::is_same_v<F, bool>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        field = v.get<F>();
      } else {
        field = v.get<F>();
      }
    } catch (const std::exception& e) {
      throw std::invalid_argument("run config: bad value for '" + path + key + "': " + e.what());
    }
  }
  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_object()) throw std::invalid_argument("run config: '" + path + key + "' must be an object");
    Reader sub{j.at(key), path + key + "."};
    fn(sub);
  }
};

// Collects the keys a visitor touches so unknown keys can be reported.
struct KeyCollector {
  std::set<std::string> keys;
  std::map<std::string, KeyCollector> sections;

  template <typename F>
  void operator()(const char* key, const F&) {
    keys.insert(key);
  }
  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    keys.insert(key);
    fn(sections[key]);
  }
};

void check_unknown(const json& j, const KeyCollector& known, const std::string& path) {
  if (!j.is_object()) throw std::invalid_argument("run config: '" + path + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.keys.count(it.key())) {
      throw std::invalid_argument("run config: unknown key '" + path + it.key() + "'");
    }
    const auto sec = known.sections.find(it.key());
    if (sec != known.sections.end()) check_unknown(it.value(), sec->second, path + it.key() + ".");
  }
}

}  // namespace

json to_json(const RunConfig& cfg) {
  Writer w;
  RunConfig copy = cfg;
  visit_run(w, copy);
  return w.j;
}

RunConfig run_config_from_json(const json& j, const RunConfig& base) {
  KeyCollector known;
  RunConfig probe;
  visit_run(known, probe);
  check_unknown(j, known, "");
  RunConfig cfg = base;
  Reader r{j, ""};
  visit_run(r, cfg);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open run config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("run config " + path + ": " + e.what());
  }
  return run_config_from_json(j, base);
}

}  // namespace ldsr
