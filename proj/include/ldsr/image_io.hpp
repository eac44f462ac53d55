#pragma once

#include <string>

#include "ldsr/tensor.hpp"

namespace ldsr {

/// Binary PPM (P6, maxval 255) <-> 1 x 3 x H x W in [0, 1].
Tensor<float> read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor<float>& image);

/// Raw planar float32: u32 H, u32 W (little-endian), then R, G, B planes.
Tensor<float> read_raw(const std::string& path);
void write_raw(const std::string& path, const Tensor<float>& image);

/// Dispatch on extension: ".ppm" or ".raw".
Tensor<float> read_image(const std::string& path);
void write_image(const std::string& path, const Tensor<float>& image);

}  // namespace ldsr
