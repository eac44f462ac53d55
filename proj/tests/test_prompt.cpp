#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "ldsr/prompt.hpp"

using namespace ldsr;

namespace {

Tensor<double> solid(double r, double g, double b, std::size_t h = 8, std::size_t w = 8) {
  Tensor<double> x({1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t i = 0; i < w; ++i) x.at(0, 0, y, i) = r, x.at(0, 1, y, i) = g, x.at(0, 2, y, i) = b;
  return x;
}

}  // namespace

TEST(Tokenize, SplitsOnCommasAndSpacesAndLowercases) {
  const std::vector<std::string> want{"clean", "sharp", "8k", "high-resolution"};
  EXPECT_EQ(tokenize("Clean,  sharp,8K\thigh-resolution ,"), want);
  EXPECT_TRUE(tokenize(" , ,").empty());
}

TEST(BuildPrompt, TagsThenTemplate) {
  EXPECT_EQ(build_prompt({"dark", "flat"}, "sharp"), "dark, flat, sharp");
  EXPECT_EQ(build_prompt({}, kQualityTemplate), std::string(kQualityTemplate));
  EXPECT_THROW(build_prompt({"x"}, ""), std::invalid_argument);
}

TEST(Vocabulary, Fnv1aHashing) {
  // Published FNV-1a 64-bit test vector for "a".
  const Vocabulary<float> v(VocabConfig{1000003, 4, 1});
  EXPECT_EQ(v.token_id("a"), 0xaf63dc4c8601ec8cull % 1000003);
  EXPECT_EQ(v.token_id("sharp"), v.token_id("sharp"));
}

TEST(Vocabulary, SeededTable) {
  const Vocabulary<float> a(VocabConfig{64, 8, 3}), b(VocabConfig{64, 8, 3}), c(VocabConfig{64, 8, 4});
  const auto ea = a.embedding(5), eb = b.embedding(5), ec = c.embedding(5);
  EXPECT_TRUE(std::equal(ea.begin(), ea.end(), eb.begin()));
  EXPECT_FALSE(std::equal(ea.begin(), ea.end(), ec.begin()));
}

TEST(EncodePrompt, MaskPaddingAndStoplist) {
  const Vocabulary<double> v(VocabConfig{512, 4, 9});
  const auto c = encode_prompt("sharp, blurry, clean", v, 6);
  ASSERT_EQ(c.c.shape(), (Shape{6, 4}));
  const std::vector<std::uint8_t> want{1, 0, 1, 0, 0, 0};
  EXPECT_EQ(c.m, want);
  EXPECT_EQ(c.active(), 2u);
  // Rows are vocabulary rows: tokens first, then padding.
  const auto row = [&](std::size_t i) { return std::vector<double>(c.c.ptr() + 4 * i, c.c.ptr() + 4 * i + 4); };
  const auto emb = [&](std::string_view t) {
    auto e = v.embedding(v.token_id(t));
    return std::vector<double>(e.begin(), e.end());
  };
  EXPECT_EQ(row(0), emb("sharp"));
  EXPECT_EQ(row(1), emb("blurry"));
  EXPECT_EQ(row(5), emb("<pad>"));
}

TEST(EncodePrompt, TruncatesAndRejectsEmpty) {
  const Vocabulary<float> v(VocabConfig{512, 4, 9});
  EXPECT_EQ(encode_prompt("a b c d e", v, 3).active(), 3u);
  EXPECT_THROW(encode_prompt("blurry noisy", v, 4), std::invalid_argument);
  EXPECT_THROW(encode_prompt("", v, 4), std::invalid_argument);
  EXPECT_THROW(encode_prompt("a", v, 0), std::invalid_argument);
}

TEST(EncodePrompt, CustomStoplistIsCaseInsensitive) {
  const Vocabulary<float> v(VocabConfig{512, 4, 9}, {"Sharp"});
  const auto c = encode_prompt("SHARP clean", v, 2);
  EXPECT_EQ(c.m, (std::vector<std::uint8_t>{0, 1}));
}

TEST(ExtractTags, SolidColors) {
  // Pure red: luma 0.299 -> bucket 1, no edges, hue 0.
  EXPECT_EQ(extract_tags(solid(1, 0, 0)), (std::vector<std::string>{"dim", "flat", "red"}));
  // Gray 0.9: bucket 3, no hue tag.
  EXPECT_EQ(extract_tags(solid(0.9, 0.9, 0.9)), (std::vector<std::string>{"light", "flat"}));
  // Blue (0, 0, 1): hue 240 -> bucket 4; luma 0.114 -> bucket 0.
  EXPECT_EQ(extract_tags(solid(0, 0, 1)), (std::vector<std::string>{"dark", "flat", "blue"}));
}

TEST(ExtractTags, EdgeBuckets) {
  Tensor<double> x = solid(0.5, 0.5, 0.5, 8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t c = 0; c < 3; ++c) x.at(0, c, y, i) = (i + y) % 2 ? 0.2 : 0.8;
  const auto tags = extract_tags(x);
  ASSERT_EQ(tags.size(), 2u);
  EXPECT_EQ(tags[1], "textured");
}

TEST(ExtractTags, BatchIndexAndShapeErrors) {
  Tensor<double> x({2, 3, 4, 4});
  EXPECT_EQ(extract_tags(x, 1)[0], "dark");
  EXPECT_THROW(extract_tags(x, 2), ShapeError);
  EXPECT_THROW(extract_tags(Tensor<double>({1, 1, 4, 4})), ShapeError);
}

TEST(TagTable, LoadOverridesAndComments) {
  const std::string path = ::testing::TempDir() + "ldsr_tags.txt";
  {
    std::ofstream out(path);
    out << "# custom\nluma 0 night\n\nhue 0 crimson  # trailing\n";
  }
  const auto t = TagTable::load(path);
  EXPECT_EQ(t.buckets.at("luma")[0], "night");
  EXPECT_EQ(t.buckets.at("luma")[1], "dim");
  EXPECT_EQ(extract_tags(solid(0.2, 0, 0), 0, t), (std::vector<std::string>{"night", "flat", "crimson"}));
  {
    std::ofstream out(path);
    out << "luma zero\n";
  }
  EXPECT_THROW(TagTable::load(path), std::runtime_error);
  std::remove(path.c_str());
}
