// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icn/nn.hpp"
#include "icn/pooling.hpp"
#include "icn/quant.hpp"
#include "icn/tensor.hpp"

namespace icn {
namespace models {

enum class Arch { CNN10, CNN14, ResNet22 };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& name);

// Exact channel-width scaling factor, e.g. 1/8 for desk-scale training.
struct Rational {
  int64_t num = 1;
  int64_t den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

struct ModelConfig {
  Arch arch = Arch::CNN10;
  Rational width_mult{1, 1};
  int n_mels = 64;
  int n_classes = 2;
  pooling::PoolKind pool = pooling::PoolKind::Avg;
  int attn_heads = 4;
};

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;  // null for non-trainable state (BN running stats)
};

// conv3x3 + weights; holds the int8 payload once the model is quantized
struct ConvLayer {
  Tensor w, b, gw, gb;
  std::optional<QuantizedTensor> qw;
  Tensor x_cache;

  Tensor forward(const Tensor& x, bool train, bool quantized);
  Tensor backward(const Tensor& gy);
};

struct BNLayer {
  nn::BatchNormParams p;
  Tensor ggamma, gbeta;
  nn::BatchNormCache cache;

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& gy);
};

// conv-BN-ReLU twice, optional trailing 2x2 average pool
struct ConvBlock {
  ConvLayer conv1, conv2;
  BNLayer bn1, bn2;
  bool pool_after = true;
  Tensor relu1_in, relu2_in, pool_in;

  Tensor forward(const Tensor& x, bool train, bool quantized);
  Tensor backward(const Tensor& gy);
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<ParamRef>& state);
};

// conv-BN-ReLU-conv-BN + shortcut (identity or 1x1 projection) + ReLU
struct ResBlock {
  ConvLayer conv1, conv2;
  BNLayer bn1, bn2;
  bool has_projection = false;
  Tensor proj_w, proj_gw;  // Cout x Cin
  bool pool_after = false;
  Tensor x_cache, relu1_in, relu2_in, pool_in;

  Tensor forward(const Tensor& x, bool train, bool quantized);
  Tensor backward(const Tensor& gy);
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<ParamRef>& state);
};

class Model {
public:
  ModelConfig config;
  bool quantized = false;
  int embed_dim = 0;
  int pool_stages = 0;

  std::vector<ConvBlock> conv_blocks;  // CNN10/CNN14 trunk; ResNet stem+tail
  std::vector<ResBlock> res_blocks;    // ResNet22 only

  // pooling head parameters (Statistic: fc over concat(mean,var); Attention: scores)
  Tensor head_w, head_b, head_gw, head_gb;
  Tensor attn_w, attn_gw;
  std::optional<QuantizedTensor> head_qw;

  // classifier
  Tensor cls_w, cls_b, cls_gw, cls_gb;
  std::optional<QuantizedTensor> cls_qw;

  // batch: N x 1 x frames x n_mels
  Tensor forward_logits(const Tensor& batch, bool train);
  Tensor forward_probs(const Tensor& batch, bool train);
  void backward(const Tensor& grad_logits);
  void zero_grads();

  std::vector<ParamRef> params();
  std::vector<ParamRef> state_tensors();
  void collect_named(std::vector<ParamRef>& params, std::vector<ParamRef>& state);
  int64_t param_count();

private:
  // forward caches for the head
  std::vector<Tensor> seq_cache_;
  Tensor embed_cache_;
  std::vector<int64_t> trunk_shape_;

  Tensor trunk_forward(const Tensor& x, bool train);
  Tensor trunk_backward(const Tensor& gy);
};

Model build_model(const ModelConfig& config, uint64_t seed);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);
std::string serialize_model(const Model& model);  // ICNM container bytes

struct SizeReport {
  int64_t param_count = 0;
  int64_t serialized_bytes = 0;
};
SizeReport model_size(Model& model);

}  // namespace models
}  // namespace icn
