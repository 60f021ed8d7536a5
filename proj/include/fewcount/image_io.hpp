#pragma once

#include <string>

#include "fewcount/tensor.hpp"

namespace fewcount {

// Reads a PNG, JPEG or binary PPM image as a planar (3,H,W) 8-bit tensor.
// Grayscale inputs are replicated across channels; alpha is dropped.
Tensor<uint8_t> read_image(const std::string& path);

// Writes a planar (3,H,W) RGB or (H,W) grayscale 8-bit tensor as a PNG.
void write_png(const std::string& path, const Tensor<uint8_t>& image);

bool has_image_extension(const std::string& filename);

} // namespace fewcount
