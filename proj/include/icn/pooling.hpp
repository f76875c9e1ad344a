// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <tuple>
#include <vector>

#include "icn/tensor.hpp"

namespace icn {
namespace pooling {

enum class PoolKind { Max, Avg, AddMaxAvg, Statistic, Attention };

const char* pool_kind_name(PoolKind k);   // max, avg, add, statistic, attention
PoolKind pool_kind_from_name(const std::string& name);

// H is an N x D embedding sequence (N instances, D channels).

std::vector<float> pool_max(const Tensor& H);
std::vector<float> pool_avg(const Tensor& H);
std::vector<float> pool_add(const Tensor& H);

// fc_weight: D_out x 2D over concat(mean, population variance); fc_bias: D_out
std::vector<float> pool_statistic(const Tensor& H, const Tensor& fc_weight,
                                  const Tensor& fc_bias);

// heads: K x (D/K) score vectors over contiguous channel blocks
std::vector<float> pool_attention(const Tensor& H, const Tensor& heads);

struct PoolGrads {
  Tensor grad_H;
  Tensor grad_w;  // Statistic: fc weight grad; Attention: head score grads
  Tensor grad_b;  // Statistic only
};

PoolGrads pool_max_backward(const Tensor& H, const std::vector<float>& grad_out);
PoolGrads pool_avg_backward(const Tensor& H, const std::vector<float>& grad_out);
PoolGrads pool_add_backward(const Tensor& H, const std::vector<float>& grad_out);
PoolGrads pool_statistic_backward(const Tensor& H, const Tensor& fc_weight,
                                  const std::vector<float>& grad_out);
PoolGrads pool_attention_backward(const Tensor& H, const Tensor& heads,
                                  const std::vector<float>& grad_out);

}  // namespace pooling
}  // namespace icn
