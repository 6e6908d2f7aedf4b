#pragma once

#include "dforge/tensor.hpp"

#include <string>

namespace dforge {

// Writes a [3,H,W] tensor in [0,1] as an 8-bit RGB PNG (values quantized
// with round(v*255)).
void write_png(const std::string& path, const ad::Tensor& image);

// Reads an 8-bit RGB PNG into a [3,H,W] tensor with values v/255.
ad::Tensor read_png(const std::string& path);

}  // namespace dforge
