// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "icn/tensor.hpp"

namespace icn {

// Symmetric per-tensor int8: dequantized = values * scale, scale = max|w|/127
// (1.0 for an all-zero tensor). Values stay in [-127, 127]; -128 is unused.
struct QuantizedTensor {
  std::vector<int64_t> shape;
  std::vector<int8_t> values;
  float scale = 1.0f;
};

QuantizedTensor quantize_tensor(const Tensor& t);
Tensor dequantize(const QuantizedTensor& q);

int8_t quantize_value(float v, float scale);

}  // namespace icn
