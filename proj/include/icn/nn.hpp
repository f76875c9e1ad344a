// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <tuple>
#include <vector>

#include "icn/tensor.hpp"

namespace icn {
namespace nn {

// ---- convolution (3x3, stride 1, zero pad 1) --------------------------------

// input N x Ci x H x W, weight Co x Ci x 3 x 3, bias Co -> N x Co x H x W
Tensor conv3x3_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);
// returns {grad_input, grad_weight, grad_bias}
std::tuple<Tensor, Tensor, Tensor> conv3x3_backward(const Tensor& input,
                                                    const Tensor& weight,
                                                    const Tensor& grad_out);

// ---- batch norm -------------------------------------------------------------

struct BatchNormParams {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.9;
  double eps = 1e-5;
};

struct BatchNormCache {
  Tensor x_hat;
  std::vector<double> mean, inv_std;
};

// mode train updates running stats in `p`; eval uses them.
Tensor batchnorm_forward(const Tensor& input, BatchNormParams& p, bool train,
                         BatchNormCache* cache = nullptr);
// returns {grad_input, grad_gamma, grad_beta}
std::tuple<Tensor, Tensor, Tensor> batchnorm_backward(const Tensor& grad_out,
                                                      const BatchNormParams& p,
                                                      const BatchNormCache& cache);

// ---- elementwise / pooling / linear / softmax -------------------------------

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

// 2x2 average pooling, stride 2. Odd H or W is edge-replicated first.
Tensor avgpool2x2_forward(const Tensor& input);
Tensor avgpool2x2_backward(const Tensor& input, const Tensor& grad_out);

// input N x D, weight K x D, bias K -> N x K
Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);
std::tuple<Tensor, Tensor, Tensor> linear_backward(const Tensor& input,
                                                   const Tensor& weight,
                                                   const Tensor& grad_out);

// rows are independent; max-subtracted for stability
Tensor softmax(const Tensor& logits);

// probs N x K with rows summing to 1; loss = mean(-ln p[label]).
// grad is w.r.t. the logits that produced probs (combined softmax+CE form).
std::pair<double, Tensor> cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  int64_t step = 0;

  void init(const std::vector<const Tensor*>& params);
};

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const AdamConfig& cfg);

// ---- gradient checking ------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

// f: scalar loss of the coordinates in `x`; analytic: dloss/dx as computed by
// the implementation under test. Central differences with step h over at most
// `max_coords` coordinates (all if the tensor is smaller).
GradCheckReport grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                           const Tensor& analytic, double tolerance, double h = 1e-3,
                           size_t max_coords = 200, uint64_t seed = 0);

}  // namespace nn
}  // namespace icn
