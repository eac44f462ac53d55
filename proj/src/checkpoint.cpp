#include "ldsr/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace ldsr {

using nlohmann::json;

namespace {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    u32(u);
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> buf) : buf_(std::move(buf)) {}

  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    const std::uint32_t u = u32();
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

json lora_config_json(const LoraConfig& c) {
  return {{"rank", c.rank}, {"alpha", c.alpha}, {"ffn_targets", c.ffn_targets}, {"seed", c.seed}};
}

LoraConfig lora_config_from(const json& j) {
  LoraConfig c;
  c.rank = j.at("rank").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.ffn_targets = j.at("ffn_targets").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

template <typename Named>
void add_all(CheckpointFile& f, const std::string& prefix, const Named& named) {
  for (const auto& [name, t] : named) f.tensors.emplace_back(prefix + name, *t);
}

template <typename Named>
void fill_all(std::map<std::string, Tensor<float>>& pool, const std::string& prefix, Named named) {
  for (auto& [name, t] : named) {
    auto it = pool.find(prefix + name);
    if (it == pool.end()) throw CheckpointError("checkpoint: missing tensor " + prefix + name);
    if (it->second.shape() != t->shape()) {
      throw CheckpointError("checkpoint: dimension mismatch for " + prefix + name);
    }
    *t = std::move(it->second);
    pool.erase(it);
  }
}

}  // namespace

void write_checkpoint_file(const std::string& path, const CheckpointFile& file) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::string header = file.header.dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header.data(), header.size());
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) w.u64(t.dim(d));
    for (std::size_t i = 0; i < t.size(); ++i) w.f32(t[i]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

CheckpointFile read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  ByteReader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
  if (r.remaining() < sizeof kCheckpointMagic ||
      r.bytes(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw CheckpointError("checkpoint: bad magic in " + path);
  }
  CheckpointFile f;
  const std::uint32_t hlen = r.u32();
  try {
    f.header = json::parse(r.bytes(hlen));
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (!f.header.is_object() || !f.header.contains("version") ||
      f.header.at("version") != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unknown version");
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d != 0 && n > (std::uint64_t(1) << 40) / d) throw CheckpointError("checkpoint: implausible dims for " + name);
      n *= d;
    }
    r.need(n * 4);
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.f32();
    f.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  return f;
}

BackboneState<float> deployed_state(const Checkpoint& ckpt) {
  BackboneState<float> s = ckpt.state;
  if (ckpt.ema && ckpt.deploy_ema) s.lora = ckpt.ema;
  return s;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  CheckpointFile f;
  json& h = f.header;
  h["version"] = kCheckpointVersion;
  h["config"] = to_json(ckpt.config);
  h["blocks"] = ckpt.state.cfg.blocks;
  h["original_blocks"] = ckpt.original_blocks ? ckpt.original_blocks : ckpt.state.cfg.blocks;
  h["kept"] = ckpt.kept;
  h["lora"] = ckpt.state.lora ? lora_config_json(ckpt.state.lora->cfg) : json(nullptr);
  h["ema"] = ckpt.ema.has_value();
  h["deploy_ema"] = ckpt.deploy_ema;
  h["prune"] = ckpt.prune ? ckpt.prune->json() : json(nullptr);
  h["params"] = ckpt.state.params.total_params();
  h["extra"] = ckpt.extra;

  add_all(f, "model.", ckpt.state.params.named());
  add_all(f, "frozen.", static_cast<const BackboneWeights<float>&>(*ckpt.state.frozen).named());
  if (ckpt.state.lora) add_all(f, "lora.", ckpt.state.lora->named());
  if (ckpt.ema) {
    if (!ckpt.state.lora) throw std::invalid_argument("save_checkpoint: EMA without adapters");
    add_all(f, "ema.", ckpt.ema->named());
  }
  write_checkpoint_file(path, f);
}

Checkpoint load_checkpoint(const std::string& path) {
  CheckpointFile f = read_checkpoint_file(path);
  const json& h = f.header;
  Checkpoint c;
  try {
    c.config = run_config_from_json(h.at("config"));
    c.kept = h.at("kept").get<std::vector<std::size_t>>();
    c.original_blocks = h.at("original_blocks").get<std::size_t>();
    BackboneConfig bc = c.config.backbone;
    bc.blocks = h.at("blocks").get<std::size_t>();
    if (!c.kept.empty() && c.kept.size() != bc.blocks) throw CheckpointError("checkpoint: kept set does not match depth");
    c.state = BackboneState<float>::init(bc);
    if (!h.at("lora").is_null()) lora_inject(c.state, lora_config_from(h.at("lora")));
    if (!h.at("prune").is_null()) c.prune = PruneReport::from_json(h.at("prune"));
    c.deploy_ema = h.at("deploy_ema").get<bool>();
    c.extra = h.value("extra", json::object());
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }

  std::map<std::string, Tensor<float>> pool;
  for (auto& [name, t] : f.tensors)
    if (!pool.emplace(name, std::move(t)).second) throw CheckpointError("checkpoint: duplicate tensor " + name);
  fill_all(pool, "model.", c.state.params.named());
  auto frozen = c.state.params;
  fill_all(pool, "frozen.", frozen.named());
  c.state.frozen = std::make_shared<const BackboneWeights<float>>(std::move(frozen));
  if (c.state.lora) fill_all(pool, "lora.", c.state.lora->named());
  if (h.at("ema").get<bool>()) {
    if (!c.state.lora) throw CheckpointError("checkpoint: EMA without adapters");
    c.ema = c.state.lora->zeros_like();
    fill_all(pool, "ema.", c.ema->named());
  }
  if (!pool.empty()) throw CheckpointError("checkpoint: unexpected tensor " + pool.begin()->first);
  return c;
}

}  // namespace ldsr
