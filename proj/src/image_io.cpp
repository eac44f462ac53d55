#include "ldsr/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ldsr {

namespace {

void require_rgb(const Tensor<float>& image, const char* where) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ShapeError(std::string(where) + ": expected 1 x 3 x H x W, got " + shape_str(image.shape()));
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Tensor<float> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  if (ppm_token(in) != "P6") throw std::runtime_error("read_ppm: " + path + " is not a binary PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(ppm_token(in));
    h = std::stoul(ppm_token(in));
    maxval = std::stoul(ppm_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error("read_ppm: malformed header in " + path);
  }
  if (maxval != 255 || w == 0 || h == 0) throw std::runtime_error("read_ppm: unsupported header in " + path);
  std::vector<unsigned char> buf(3 * w * h);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  }
  Tensor<float> t({1, 3, h, w});
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c) t[c * h * w + i] = static_cast<float>(buf[3 * i + c]) / 255.0f;
  return t;
}

void write_ppm(const std::string& path, const Tensor<float>& image) {
  require_rgb(image, "write_ppm");
  const std::size_t h = image.dim(2), w = image.dim(3);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> buf(3 * w * h);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(image[c * h * w + i], 0.0f, 1.0f);
      buf[3 * i + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

Tensor<float> read_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_raw: cannot open " + path);
  unsigned char hdr[8];
  in.read(reinterpret_cast<char*>(hdr), 8);
  if (in.gcount() != 8) throw std::runtime_error("read_raw: truncated header in " + path);
  auto u32 = [&](int o) {
    return static_cast<std::uint32_t>(hdr[o]) | static_cast<std::uint32_t>(hdr[o + 1]) << 8 |
           static_cast<std::uint32_t>(hdr[o + 2]) << 16 | static_cast<std::uint32_t>(hdr[o + 3]) << 24;
  };
  const std::size_t h = u32(0), w = u32(4);
  if (h == 0 || w == 0) throw std::runtime_error("read_raw: empty image in " + path);
  Tensor<float> t({1, 3, h, w});
  in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(t.size() * sizeof(float))) {
    throw std::runtime_error("read_raw: truncated pixel data in " + path);
  }
  return t;
}

void write_raw(const std::string& path, const Tensor<float>& image) {
  require_rgb(image, "write_raw");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_raw: cannot open " + path);
  unsigned char hdr[8];
  const auto h = static_cast<std::uint32_t>(image.dim(2)), w = static_cast<std::uint32_t>(image.dim(3));
  for (int i = 0; i < 4; ++i) {
    hdr[i] = static_cast<unsigned char>(h >> (8 * i));
    hdr[4 + i] = static_cast<unsigned char>(w >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(hdr), 8);
  out.write(reinterpret_cast<const char*>(image.ptr()),
            static_cast<std::streamsize>(image.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write_raw: write failed for " + path);
}

Tensor<float> read_image(const std::string& path) {
  if (ends_with(path, ".ppm")) return read_ppm(path);
  if (ends_with(path, ".raw")) return read_raw(path);
  throw std::invalid_argument("read_image: unsupported extension: " + path);
}

void write_image(const std::string& path, const Tensor<float>& image) {
  if (ends_with(path, ".ppm")) return write_ppm(path, image);
  if (ends_with(path, ".raw")) return write_raw(path, image);
  throw std::invalid_argument("write_image: unsupported extension: " + path);
}

}  // namespace ldsr
