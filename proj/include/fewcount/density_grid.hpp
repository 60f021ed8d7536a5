#pragma once

#include <string>

#include "fewcount/tensor.hpp"

namespace fewcount {

// Raw density map file: one text header line "FCDENS 1 <H> <W>\n" followed
// by H*W little-endian 32-bit floats, row-major.
void write_density_grid(const std::string& path, const Tensor<float>& map);
Tensor<float> read_density_grid(const std::string& path);

} // namespace fewcount
