#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "ldsr/image_io.hpp"
#include "ldsr/rng.hpp"

using namespace ldsr;

namespace {

class ImageIo : public ::testing::Test {
 protected:
  std::string dir = ::testing::TempDir();
  std::string ppm = dir + "ldsr_io.ppm", raw = dir + "ldsr_io.raw";
  void TearDown() override {
    std::remove(ppm.c_str());
    std::remove(raw.c_str());
  }
};

}  // namespace

TEST_F(ImageIo, PpmRoundtripOfByteValues) {
  Tensor<float> x({1, 3, 5, 7});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i * 37 % 256) / 255.0f;
  write_ppm(ppm, x);
  EXPECT_EQ(read_ppm(ppm), x);
  EXPECT_EQ(read_image(ppm), x);
}

TEST_F(ImageIo, PpmQuantizesAndClamps) {
  Tensor<float> x({1, 3, 1, 2});
  x[0] = -0.5f, x[1] = 2.0f, x[2] = 0.5f;
  write_ppm(ppm, x);
  const auto y = read_ppm(ppm);
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_EQ(y[1], 1.0f);
  EXPECT_EQ(y[2], 128.0f / 255.0f);  // round(127.5)
}

TEST_F(ImageIo, PpmHeaderWithComment) {
  {
    std::ofstream out(ppm, std::ios::binary);
    out << "P6\n# made by hand\n2 1\n255\n";
    const unsigned char px[6] = {255, 0, 0, 0, 0, 51};
    out.write(reinterpret_cast<const char*>(px), 6);
  }
  const auto y = read_ppm(ppm);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 1, 2}));
  EXPECT_EQ(y.at(0, 0, 0, 0), 1.0f);
  EXPECT_EQ(y.at(0, 2, 0, 1), 0.2f);
}

TEST_F(ImageIo, RawRoundtripIsBitwise) {
  Tensor<float> x({1, 3, 9, 4});
  Rng rng(4);
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  write_raw(raw, x);
  EXPECT_EQ(read_raw(raw), x);
  EXPECT_EQ(read_image(raw), x);
}

TEST_F(ImageIo, BadFilesThrow) {
  EXPECT_ANY_THROW(read_ppm(dir + "ldsr_missing.ppm"));
  {
    std::ofstream out(ppm, std::ios::binary);
    out << "P5\n2 2\n255\n";
  }
  EXPECT_ANY_THROW(read_ppm(ppm));
  {
    std::ofstream out(ppm, std::ios::binary);
    out << "P6\n4 4\n255\nabc";
  }
  EXPECT_ANY_THROW(read_ppm(ppm));
  {
    std::ofstream out(raw, std::ios::binary);
    out << "abcdefghij";
  }
  EXPECT_ANY_THROW(read_raw(raw));
  EXPECT_ANY_THROW(read_image(dir + "x.png"));
  EXPECT_ANY_THROW(write_ppm(ppm, Tensor<float>({1, 1, 2, 2})));
}
