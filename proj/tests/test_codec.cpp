#include <gtest/gtest.h>

#include "ldsr/codec.hpp"
#include "ldsr/rng.hpp"

using namespace ldsr;

namespace {

template <typename T>
Tensor<T> random_image(Rng& rng, std::size_t h, std::size_t w, std::size_t b = 1) {
  Tensor<T> x({b, 3, h, w});
  for (auto& e : x.data()) e = static_cast<T>(rng.uniform());
  return x;
}

const CodecState<float>& codec_f() {
  static const CodecState<float> c;
  return c;
}

}  // namespace

TEST(Codec, BasisIsOrthogonal) {
  EXPECT_LT(codec_f().orthogonality_error(), 1e-5);
  CodecState<double> d;
  EXPECT_LT(d.orthogonality_error(), 1e-12);
}

TEST(Codec, RoundtripHundredImages) {
  Rng rng(1);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto x = random_image<float>(rng, 64, 64);
    auto y = codec_f().decode(codec_f().encode(x), false);
    worst = std::max(worst, static_cast<double>(max_abs_diff(x, y)));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Codec, TokenCountLaw) {
  Tensor<float> x({1, 3, 512, 512});
  auto z = codec_f().encode(x);
  EXPECT_EQ(z.height(), 16u);
  EXPECT_EQ(z.width(), 16u);
  EXPECT_EQ(z.tokens(), 256u);
  EXPECT_EQ(max_abs(z.full), 0.0f);
  auto z2 = codec_f().encode(Tensor<float>({2, 3, 64, 96}));
  EXPECT_EQ(z2.height(), 2u);
  EXPECT_EQ(z2.width(), 3u);
  EXPECT_EQ(z2.tokens(), 6u);
  EXPECT_EQ(z2.view().shape(), (Shape{2, 32, 2, 3}));
}

TEST(Codec, ZeroLatentDecodesToZero) {
  Latent<float> z{Tensor<float>({1, kPatchDim, 2, 2}), 32, 0.1f};
  EXPECT_EQ(max_abs(codec_f().decode(z)), 0.0f);
}

TEST(Codec, RejectsUnalignedInput) {
  EXPECT_THROW(codec_f().encode(Tensor<float>({1, 3, 40, 64})), ShapeError);
  Latent<float> bad{Tensor<float>({1, 100, 2, 2}), 32, 0.1f};
  EXPECT_THROW(codec_f().decode(bad), ShapeError);
}

TEST(Codec, DecodeClamps) {
  Rng rng(2);
  auto x = random_image<float>(rng, 32, 32);
  for (auto& e : x.data()) e = 3.0f * e - 1.0f;
  auto y = codec_f().decode(codec_f().encode(x));
  for (float v : y.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Codec, DeterministicAcrossInstances) {
  Rng rng(3);
  auto x = random_image<float>(rng, 32, 64);
  CodecState<float> other;
  EXPECT_EQ(codec_f().encode(x).full, other.encode(x).full);
  EXPECT_EQ(codec_f().encode(x).full, codec_f().encode(x).full);
}

TEST(Codec, ViewShortcutsMatchFullPath) {
  Rng rng(4);
  CodecState<double> c;
  auto x = random_image<double>(rng, 64, 32, 2);
  auto z = c.encode(x);
  EXPECT_LT(max_abs_diff(c.encode_view(x), z.view()), 1e-12);
  auto dv = gaussian_fill<double>(rng, z.view().shape());
  Tensor<double> v = z.view();
  axpy(1.0, dv, v);
  auto lifted = sub(c.decode(z.with_view(v), false), c.decode(z, false));
  EXPECT_LT(max_abs_diff(c.decode_view_delta(dv), lifted), 1e-10);
}

TEST(Codec, ViewGradIsAdjointOfDelta) {
  Rng rng(5);
  CodecState<double> c;
  auto dv = gaussian_fill<double>(rng, {1, 32, 1, 2});
  auto g = gaussian_fill<double>(rng, {1, 3, 32, 64});
  EXPECT_NEAR(dot(c.decode_view_delta(dv), g), dot(dv, c.decode_view_grad(g)), 1e-9);
}

TEST(AlignTo32, PadsToNextMultiple) {
  auto a = align_to_32(Tensor<float>({1, 3, 512, 512}));
  EXPECT_EQ(a.image.shape(), (Shape{1, 3, 512, 512}));
  auto b = align_to_32(Tensor<float>({1, 3, 500, 500}));
  EXPECT_EQ(b.image.shape(), (Shape{1, 3, 512, 512}));
  EXPECT_EQ(b.orig_h, 500u);
  Rng rng(6);
  auto x = random_image<float>(rng, 33, 65);
  auto c = align_to_32(x);
  EXPECT_EQ(c.image.shape(), (Shape{1, 3, 64, 96}));
  EXPECT_EQ(crop(c.image, c.orig_h, c.orig_w), x);
  // Reflect padding mirrors about the last row/column.
  EXPECT_EQ(c.image.at(0, 1, 33, 10), x.at(0, 1, 31, 10));
  EXPECT_EQ(c.image.at(0, 2, 5, 66), x.at(0, 2, 5, 62));
}

TEST(SpaceToDepth, Inverse) {
  Rng rng(7);
  auto x = random_image<float>(rng, 64, 96);
  auto p = space_to_depth(x);
  EXPECT_EQ(p.shape(), (Shape{1, kPatchDim, 2, 3}));
  EXPECT_EQ(depth_to_space(p), x);
}
