#pragma once

#include <vector>

#include "fewcount/geometry.hpp"
#include "fewcount/tensor.hpp"

namespace fewcount {

// Min-max scales a density map to an 8-bit grayscale image.
Tensor<uint8_t> density_to_gray(const Tensor<float>& density);

// Draws the exemplar boxes on the input image and composes it side by side
// with a grayscale density panel. Illustrative output only.
Tensor<uint8_t> render_overlay(const Tensor<uint8_t>& rgb, const std::vector<BoundingBox>& boxes,
                               const Tensor<float>& density);

} // namespace fewcount
