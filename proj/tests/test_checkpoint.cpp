#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <iterator>

#include "ldsr/checkpoint.hpp"
#include "ldsr/config.hpp"
#include "support.hpp"

using namespace ldsr;

namespace {

RunConfig small_config() { return ldsr::testing::small_run_config(); }

Checkpoint adapted_checkpoint() {
  Checkpoint ck;
  ck.config = small_config();
  ck.state = BackboneState<float>::init(ck.config.backbone);
  lora_inject(ck.state, ck.config.lora);
  Rng rng(12);
  for (auto& [name, p] : ck.state.lora->named())
    if (name.back() == 'b') *p = gaussian_fill<float>(rng, p->shape(), 0.1);
  ck.ema = ck.state.lora->zeros_like();
  for (auto& [name, p] : ck.ema->named()) *p = gaussian_fill<float>(rng, p->shape(), 0.05);
  ck.deploy_ema = false;
  ck.original_blocks = 3;
  ck.extra["note"] = "x";
  return ck;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor<float> run(const BackboneState<float>& s) {
  Rng rng(5);
  const auto z = gaussian_fill<float>(rng, {1, s.cfg.latent_channels, 2, 3});
  const CondBatch<float> cond{ldsr::testing::random_condition<float>(rng, s.cfg.text_tokens, s.cfg.text_width)};
  return forward(s, z, 400.0, cond, true, false).out;
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::string path = ::testing::TempDir() + "ldsr_test.ckpt";
  void TearDown() override { std::remove(path.c_str()); }
};

}  // namespace

TEST_F(CheckpointTest, RoundtripIsBitwise) {
  const auto ck = adapted_checkpoint();
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);

  EXPECT_EQ(to_json(back.config), to_json(ck.config));
  EXPECT_EQ(back.config.prompt_template, "sharp, clean");
  EXPECT_EQ(back.deploy_ema, false);
  EXPECT_EQ(back.original_blocks, 3u);
  EXPECT_EQ(back.extra, ck.extra);
  const auto a = ck.state.params.named(), b = back.state.params.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second) << a[i].first;
  const auto fa = ck.state.frozen->named(), fb = back.state.frozen->named();
  for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_EQ(*fa[i].second, *fb[i].second) << fa[i].first;
  const auto la = ck.state.lora->named(), lb = back.state.lora->named();
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(*la[i].second, *lb[i].second);
  ASSERT_TRUE(back.ema.has_value());
  const auto ea = ck.ema->named(), eb = back.ema->named();
  for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_EQ(*ea[i].second, *eb[i].second);

  EXPECT_EQ(run(back.state), run(ck.state));
  // Saving the loaded checkpoint reproduces the file byte for byte.
  const auto bytes = slurp(path);
  save_checkpoint(path, back);
  EXPECT_EQ(slurp(path), bytes);
}

TEST_F(CheckpointTest, DeployedStateFollowsFlag) {
  auto ck = adapted_checkpoint();
  EXPECT_EQ(run(deployed_state(ck)), run(ck.state));
  ck.deploy_ema = true;
  auto with_ema = ck.state;
  with_ema.lora = ck.ema;
  EXPECT_EQ(run(deployed_state(ck)), run(with_ema));
}

TEST_F(CheckpointTest, CorruptFilesAreRejected) {
  save_checkpoint(path, adapted_checkpoint());
  const auto good = slurp(path);

  auto bad = good;
  bad[0] = 'X';
  spit(path, bad);
  EXPECT_THROW(read_checkpoint_file(path), CheckpointError);

  for (std::size_t cut : {std::size_t{3}, good.size() / 2, good.size() - 1}) {
    spit(path, std::vector<char>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)));
    EXPECT_THROW(load_checkpoint(path), CheckpointError) << cut;
  }

  bad = good;
  bad.push_back('\0');
  spit(path, bad);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  auto file = CheckpointFile{};
  file.header = {{"version", kCheckpointVersion + 1}};
  write_checkpoint_file(path, file);
  EXPECT_THROW(read_checkpoint_file(path), CheckpointError);

  EXPECT_THROW(load_checkpoint(path + ".missing"), CheckpointError);
}

TEST_F(CheckpointTest, MissingOrExtraTensorsAreRejected) {
  save_checkpoint(path, adapted_checkpoint());
  auto file = read_checkpoint_file(path);
  file.tensors.pop_back();
  write_checkpoint_file(path, file);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  file = CheckpointFile{};
  save_checkpoint(path, adapted_checkpoint());
  file = read_checkpoint_file(path);
  file.tensors.emplace_back("model.bogus", Tensor<float>({2}));
  write_checkpoint_file(path, file);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST_F(CheckpointTest, PrunedModelKeepsKeptBlocks) {
  Checkpoint ck;
  ck.config = small_config();
  auto dense = BackboneState<float>::init(ck.config.backbone);
  ck.state = remove_blocks(dense, {0, 2});
  ck.kept = {0, 2};
  ck.original_blocks = 3;
  PruneReport rep;
  rep.kept = {0, 2};
  rep.total_params_after = ck.state.params.total_params();
  ck.prune = rep;
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.state.cfg.blocks, 2u);
  EXPECT_EQ(back.kept, (std::vector<std::size_t>{0, 2}));
  EXPECT_FALSE(back.state.lora.has_value());
  const auto& c = ck.config.backbone;
  EXPECT_EQ(back.state.params.total_params(), fixed_param_count(c) + 2 * block_param_count(c));
  ASSERT_TRUE(back.prune.has_value());
  EXPECT_EQ(back.prune->total_params_after, back.state.params.total_params());
  EXPECT_EQ(run(back.state), run(ck.state));
}

TEST(RunConfigJson, RoundtripAndPartialOverride) {
  auto c = small_config();
  c.backbone.attention = AttentionKind::quadratic;
  c.train.lr = 3e-4;
  c.prune.keep_ratio = 0.5;
  const auto j = to_json(c);
  EXPECT_EQ(j.at("backbone").at("attention"), "quadratic");
  const auto back = run_config_from_json(j);
  EXPECT_EQ(to_json(back), j);

  const auto partial = run_config_from_json(nlohmann::json::parse(R"({"train": {"steps": 5}})"), c);
  EXPECT_EQ(partial.train.steps, 5u);
  EXPECT_EQ(partial.train.lr, 3e-4);
  EXPECT_EQ(partial.backbone.width, 16u);
}

TEST(RunConfigJson, UnknownKeysAndInvalidValuesThrow) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"trian": {}})")), std::invalid_argument);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"stepz": 1}})")), std::invalid_argument);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"backbone": {"attention": "cubic"}})")),
               std::invalid_argument);
  auto c = small_config();
  c.codec.latent_channels = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(small_config().validate());
  EXPECT_NO_THROW(RunConfig::toy().validate());
}
