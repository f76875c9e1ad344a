// SPDX-License-Identifier: Apache-2.0
#include "icn/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "icn/error.hpp"

namespace icn {
namespace models {

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::CNN10: return "CNN10";
    case Arch::CNN14: return "CNN14";
    case Arch::ResNet22: return "ResNet22";
  }
  return "?";
}

Arch arch_from_name(const std::string& name) {
  if (name == "CNN10" || name == "cnn10") return Arch::CNN10;
  if (name == "CNN14" || name == "cnn14") return Arch::CNN14;
  if (name == "ResNet22" || name == "resnet22") return Arch::ResNet22;
  throw ConfigError("unknown architecture: " + name);
}

namespace {

float uniform_pm(std::mt19937_64& rng, float limit) {
  const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  return static_cast<float>((2.0 * u - 1.0) * limit);
}

void he_uniform(Tensor& t, int64_t fan_in, std::mt19937_64& rng) {
  const float limit = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  for (float& v : t.data) v = uniform_pm(rng, limit);
}

void init_conv(ConvLayer& c, int64_t ci, int64_t co, std::mt19937_64& rng) {
  c.w = Tensor({co, ci, 3, 3});
  c.b = Tensor({co});
  c.gw = Tensor(c.w.shape);
  c.gb = Tensor(c.b.shape);
  he_uniform(c.w, ci * 9, rng);
}

void init_bn(BNLayer& bn, int64_t c) {
  bn.p.gamma = Tensor({c});
  bn.p.beta = Tensor({c});
  bn.p.running_mean = Tensor({c});
  bn.p.running_var = Tensor({c});
  bn.p.gamma.fill(1.0f);
  bn.p.running_var.fill(1.0f);
  bn.ggamma = Tensor({c});
  bn.gbeta = Tensor({c});
}

int64_t scaled_width(int64_t base, const Rational& m) {
  const int64_t v = base * m.num;
  if (m.den <= 0 || m.num <= 0 || v % m.den != 0 || v / m.den < 1)
    throw InvalidWidth("width " + std::to_string(base) + " x " + std::to_string(m.num) +
                       "/" + std::to_string(m.den) + " is not a positive integer");
  return v / m.den;
}

// dynamic per-tensor activation quantization followed by integer MAC
float activation_scale(const Tensor& x) {
  float mx = 0.0f;
  for (float v : x.data) mx = std::max(mx, std::fabs(v));
  return mx > 0.0f ? mx / 127.0f : 1.0f;
}

Tensor quant_conv3x3(const Tensor& x, const QuantizedTensor& qw, const Tensor& bias) {
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t co = qw.shape[0];
  const float sa = activation_scale(x);
  std::vector<int8_t> xq(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) xq[i] = quantize_value(x.data[i], sa);
  const float rescale = sa * qw.scale;
  Tensor out({n, co, h, w});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx) {
          int32_t acc = 0;
          for (int64_t c = 0; c < ci; ++c) {
            const int8_t* wr = qw.values.data() + (o * ci + c) * 9;
            const int8_t* xc = xq.data() + (s * ci + c) * h * w;
            for (int dy = -1; dy <= 1; ++dy) {
              const int64_t sy = y + dy;
              if (sy < 0 || sy >= h) continue;
              for (int dx = -1; dx <= 1; ++dx) {
                const int64_t sx = xx + dx;
                if (sx < 0 || sx >= w) continue;
                acc += static_cast<int32_t>(wr[(dy + 1) * 3 + (dx + 1)]) *
                       static_cast<int32_t>(xc[sy * w + sx]);
              }
            }
          }
          out.at4(s, o, y, xx) =
              static_cast<float>(acc) * rescale + bias.data[static_cast<size_t>(o)];
        }
  return out;
}

Tensor quant_linear(const Tensor& x, const QuantizedTensor& qw, const Tensor& bias) {
  const int64_t n = x.dim(0), d = x.dim(1);
  const int64_t k = qw.shape[0];
  if (qw.shape[1] != d) throw ShapeMismatch("quantized linear input width");
  const float sa = activation_scale(x);
  std::vector<int8_t> xq(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) xq[i] = quantize_value(x.data[i], sa);
  const float rescale = sa * qw.scale;
  Tensor out({n, k});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t o = 0; o < k; ++o) {
      int32_t acc = 0;
      const int8_t* xr = xq.data() + i * d;
      const int8_t* wr = qw.values.data() + o * d;
      for (int64_t j = 0; j < d; ++j)
        acc += static_cast<int32_t>(xr[j]) * static_cast<int32_t>(wr[j]);
      out.at2(i, o) =
          static_cast<float>(acc) * rescale + bias.data[static_cast<size_t>(o)];
    }
  return out;
}

Tensor conv1x1_forward(const Tensor& x, const Tensor& w) {
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int64_t co = w.dim(0);
  Tensor out({n, co, h, ww});
  const int64_t hw = h * ww;
  for (int64_t s = 0; s < n; ++s)
    for (int64_t o = 0; o < co; ++o) {
      float* dst = out.ptr() + (s * co + o) * hw;
      for (int64_t c = 0; c < ci; ++c) {
        const float wv = w.at2(o, c);
        const float* src = x.ptr() + (s * ci + c) * hw;
        for (int64_t j = 0; j < hw; ++j) dst[j] += wv * src[j];
      }
    }
  return out;
}

}  // namespace

Tensor ConvLayer::forward(const Tensor& x, bool train, bool quantized) {
  if (quantized) {
    if (!qw) throw ConfigError("quantized forward without quantized weights");
    return quant_conv3x3(x, *qw, b);
  }
  if (train) x_cache = x;
  return nn::conv3x3_forward(x, w, b);
}

Tensor ConvLayer::backward(const Tensor& gy) {
  auto [gx, gweight, gbias] = nn::conv3x3_backward(x_cache, w, gy);
  gw = std::move(gweight);
  gb = std::move(gbias);
  return gx;
}

Tensor BNLayer::forward(const Tensor& x, bool train) {
  return nn::batchnorm_forward(x, p, train, train ? &cache : nullptr);
}

Tensor BNLayer::backward(const Tensor& gy) {
  auto [gx, gg, gb2] = nn::batchnorm_backward(gy, p, cache);
  ggamma = std::move(gg);
  gbeta = std::move(gb2);
  return gx;
}

Tensor ConvBlock::forward(const Tensor& x, bool train, bool quantized) {
  Tensor t = conv1.forward(x, train, quantized);
  t = bn1.forward(t, train);
  if (train) relu1_in = t;
  t = nn::relu_forward(t);
  t = conv2.forward(t, train, quantized);
  t = bn2.forward(t, train);
  if (train) relu2_in = t;
  t = nn::relu_forward(t);
  if (pool_after) {
    if (train) pool_in = t;
    t = nn::avgpool2x2_forward(t);
  }
  return t;
}

Tensor ConvBlock::backward(const Tensor& gy) {
  Tensor g = gy;
  if (pool_after) g = nn::avgpool2x2_backward(pool_in, g);
  g = nn::relu_backward(relu2_in, g);
  g = bn2.backward(g);
  g = conv2.backward(g);
  g = nn::relu_backward(relu1_in, g);
  g = bn1.backward(g);
  return conv1.backward(g);
}

void ConvBlock::collect(const std::string& prefix, std::vector<ParamRef>& params,
                        std::vector<ParamRef>& state) {
  params.push_back({prefix + ".conv1.w", &conv1.w, &conv1.gw});
  params.push_back({prefix + ".conv1.b", &conv1.b, &conv1.gb});
  params.push_back({prefix + ".bn1.gamma", &bn1.p.gamma, &bn1.ggamma});
  params.push_back({prefix + ".bn1.beta", &bn1.p.beta, &bn1.gbeta});
  params.push_back({prefix + ".conv2.w", &conv2.w, &conv2.gw});
  params.push_back({prefix + ".conv2.b", &conv2.b, &conv2.gb});
  params.push_back({prefix + ".bn2.gamma", &bn2.p.gamma, &bn2.ggamma});
  params.push_back({prefix + ".bn2.beta", &bn2.p.beta, &bn2.gbeta});
  state.push_back({prefix + ".bn1.rmean", &bn1.p.running_mean, nullptr});
  state.push_back({prefix + ".bn1.rvar", &bn1.p.running_var, nullptr});
  state.push_back({prefix + ".bn2.rmean", &bn2.p.running_mean, nullptr});
  state.push_back({prefix + ".bn2.rvar", &bn2.p.running_var, nullptr});
}

Tensor ResBlock::forward(const Tensor& x, bool train, bool quantized) {
  if (train) x_cache = x;
  Tensor t = conv1.forward(x, train, quantized);
  t = bn1.forward(t, train);
  if (train) relu1_in = t;
  t = nn::relu_forward(t);
  t = conv2.forward(t, train, quantized);
  t = bn2.forward(t, train);
  Tensor shortcut = has_projection ? conv1x1_forward(x, proj_w) : x;
  if (!t.same_shape(shortcut)) throw ShapeMismatch("residual shortcut shape");
  for (size_t i = 0; i < t.data.size(); ++i) t.data[i] += shortcut.data[i];
  if (train) relu2_in = t;
  t = nn::relu_forward(t);
  if (pool_after) {
    if (train) pool_in = t;
    t = nn::avgpool2x2_forward(t);
  }
  return t;
}

Tensor ResBlock::backward(const Tensor& gy) {
  Tensor g = gy;
  if (pool_after) g = nn::avgpool2x2_backward(pool_in, g);
  g = nn::relu_backward(relu2_in, g);
  // main path
  Tensor gm = bn2.backward(g);
  gm = conv2.backward(gm);
  gm = nn::relu_backward(relu1_in, gm);
  gm = bn1.backward(gm);
  Tensor gx = conv1.backward(gm);
  // shortcut path
  if (has_projection) {
    const int64_t n = x_cache.dim(0), ci = x_cache.dim(1), h = x_cache.dim(2),
                  w = x_cache.dim(3);
    const int64_t co = proj_w.dim(0);
    const int64_t hw = h * w;
    proj_gw = Tensor(proj_w.shape);
    for (int64_t o = 0; o < co; ++o)
      for (int64_t c = 0; c < ci; ++c) {
        double acc = 0.0;
        for (int64_t s = 0; s < n; ++s) {
          const float* gp = g.ptr() + (s * co + o) * hw;
          const float* xp = x_cache.ptr() + (s * ci + c) * hw;
          for (int64_t j = 0; j < hw; ++j) acc += static_cast<double>(gp[j]) * xp[j];
        }
        proj_gw.at2(o, c) = static_cast<float>(acc);
      }
    for (int64_t s = 0; s < n; ++s)
      for (int64_t c = 0; c < ci; ++c) {
        float* dst = gx.ptr() + (s * ci + c) * hw;
        for (int64_t o = 0; o < co; ++o) {
          const float wv = proj_w.at2(o, c);
          const float* gp = g.ptr() + (s * co + o) * hw;
          for (int64_t j = 0; j < hw; ++j) dst[j] += wv * gp[j];
        }
      }
  } else {
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g.data[i];
  }
  return gx;
}

void ResBlock::collect(const std::string& prefix, std::vector<ParamRef>& params,
                       std::vector<ParamRef>& state) {
  params.push_back({prefix + ".conv1.w", &conv1.w, &conv1.gw});
  params.push_back({prefix + ".conv1.b", &conv1.b, &conv1.gb});
  params.push_back({prefix + ".bn1.gamma", &bn1.p.gamma, &bn1.ggamma});
  params.push_back({prefix + ".bn1.beta", &bn1.p.beta, &bn1.gbeta});
  params.push_back({prefix + ".conv2.w", &conv2.w, &conv2.gw});
  params.push_back({prefix + ".conv2.b", &conv2.b, &conv2.gb});
  params.push_back({prefix + ".bn2.gamma", &bn2.p.gamma, &bn2.ggamma});
  params.push_back({prefix + ".bn2.beta", &bn2.p.beta, &bn2.gbeta});
  if (has_projection) params.push_back({prefix + ".proj.w", &proj_w, &proj_gw});
  state.push_back({prefix + ".bn1.rmean", &bn1.p.running_mean, nullptr});
  state.push_back({prefix + ".bn1.rvar", &bn1.p.running_var, nullptr});
  state.push_back({prefix + ".bn2.rmean", &bn2.p.running_mean, nullptr});
  state.push_back({prefix + ".bn2.rvar", &bn2.p.running_var, nullptr});
}

Tensor Model::trunk_forward(const Tensor& x, bool train) {
  Tensor t = x;
  if (config.arch == Arch::ResNet22) {
    t = conv_blocks[0].forward(t, train, quantized);
    for (auto& rb : res_blocks) t = rb.forward(t, train, quantized);
    t = conv_blocks[1].forward(t, train, quantized);
  } else {
    for (auto& cb : conv_blocks) t = cb.forward(t, train, quantized);
  }
  return t;
}

Tensor Model::trunk_backward(const Tensor& gy) {
  Tensor g = gy;
  if (config.arch == Arch::ResNet22) {
    g = conv_blocks[1].backward(g);
    for (auto it = res_blocks.rbegin(); it != res_blocks.rend(); ++it)
      g = it->backward(g);
    g = conv_blocks[0].backward(g);
  } else {
    for (auto it = conv_blocks.rbegin(); it != conv_blocks.rend(); ++it)
      g = it->backward(g);
  }
  return g;
}

Tensor Model::forward_logits(const Tensor& batch, bool train) {
  if (batch.ndim() != 4 || batch.dim(1) != 1)
    throw ShapeMismatch("model input must be N x 1 x frames x n_mels");
  if (batch.dim(3) != config.n_mels)
    throw ShapeMismatch("mel bin count mismatch");
  if (batch.dim(2) < (1LL << pool_stages))
    throw InputTooSmall("need at least " + std::to_string(1LL << pool_stages) +
                        " frames, got " + std::to_string(batch.dim(2)));

  Tensor t = trunk_forward(batch, train);
  const int64_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  trunk_shape_ = t.shape;

  // average over the frequency axis: each time frame becomes one embedding h_i
  seq_cache_.assign(static_cast<size_t>(n), Tensor());
  Tensor embed({n, static_cast<int64_t>(embed_dim)});
  Tensor stats;  // statistic head input, batch x 2D
  if (config.pool == pooling::PoolKind::Statistic) stats = Tensor({n, 2 * c});

  for (int64_t s = 0; s < n; ++s) {
    Tensor seq({h, c});
    for (int64_t y = 0; y < h; ++y)
      for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int64_t x = 0; x < w; ++x) acc += t.at4(s, ch, y, x);
        seq.at2(y, ch) = static_cast<float>(acc / static_cast<double>(w));
      }
    switch (config.pool) {
      case pooling::PoolKind::Max: {
        auto v = pooling::pool_max(seq);
        std::copy(v.begin(), v.end(), embed.ptr() + s * embed_dim);
        break;
      }
      case pooling::PoolKind::Avg: {
        auto v = pooling::pool_avg(seq);
        std::copy(v.begin(), v.end(), embed.ptr() + s * embed_dim);
        break;
      }
      case pooling::PoolKind::AddMaxAvg: {
        auto v = pooling::pool_add(seq);
        std::copy(v.begin(), v.end(), embed.ptr() + s * embed_dim);
        break;
      }
      case pooling::PoolKind::Statistic: {
        std::vector<double> mean(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
        for (int64_t y = 0; y < h; ++y)
          for (int64_t ch = 0; ch < c; ++ch) mean[static_cast<size_t>(ch)] += seq.at2(y, ch);
        for (double& m : mean) m /= static_cast<double>(h);
        for (int64_t y = 0; y < h; ++y)
          for (int64_t ch = 0; ch < c; ++ch) {
            const double dv = seq.at2(y, ch) - mean[static_cast<size_t>(ch)];
            var[static_cast<size_t>(ch)] += dv * dv;
          }
        for (double& v : var) v /= static_cast<double>(h);
        for (int64_t ch = 0; ch < c; ++ch) {
          stats.at2(s, ch) = static_cast<float>(mean[static_cast<size_t>(ch)]);
          stats.at2(s, c + ch) = static_cast<float>(var[static_cast<size_t>(ch)]);
        }
        break;
      }
      case pooling::PoolKind::Attention: {
        auto v = pooling::pool_attention(seq, attn_w);
        std::copy(v.begin(), v.end(), embed.ptr() + s * embed_dim);
        break;
      }
    }
    seq_cache_[static_cast<size_t>(s)] = std::move(seq);
  }

  if (config.pool == pooling::PoolKind::Statistic) {
    embed = (quantized && head_qw) ? quant_linear(stats, *head_qw, head_b)
                                   : nn::linear_forward(stats, head_w, head_b);
  }
  embed_cache_ = embed;
  return (quantized && cls_qw) ? quant_linear(embed, *cls_qw, cls_b)
                               : nn::linear_forward(embed, cls_w, cls_b);
}

Tensor Model::forward_probs(const Tensor& batch, bool train) {
  return nn::softmax(forward_logits(batch, train));
}

void Model::backward(const Tensor& grad_logits) {
  zero_grads();
  const int64_t n = grad_logits.dim(0);
  auto [gembed, gclsw, gclsb] = nn::linear_backward(embed_cache_, cls_w, grad_logits);
  cls_gw = std::move(gclsw);
  cls_gb = std::move(gclsb);

  const int64_t c = trunk_shape_[1], h = trunk_shape_[2], w = trunk_shape_[3];
  Tensor gtrunk({n, c, h, w});
  for (int64_t s = 0; s < n; ++s) {
    std::vector<float> go(static_cast<size_t>(embed_dim));
    std::copy(gembed.ptr() + s * embed_dim, gembed.ptr() + (s + 1) * embed_dim, go.begin());
    const Tensor& seq = seq_cache_[static_cast<size_t>(s)];
    pooling::PoolGrads pg;
    switch (config.pool) {
      case pooling::PoolKind::Max: pg = pooling::pool_max_backward(seq, go); break;
      case pooling::PoolKind::Avg: pg = pooling::pool_avg_backward(seq, go); break;
      case pooling::PoolKind::AddMaxAvg: pg = pooling::pool_add_backward(seq, go); break;
      case pooling::PoolKind::Statistic: {
        pg = pooling::pool_statistic_backward(seq, head_w, go);
        for (size_t i = 0; i < head_gw.data.size(); ++i) head_gw.data[i] += pg.grad_w.data[i];
        for (size_t i = 0; i < head_gb.data.size(); ++i) head_gb.data[i] += pg.grad_b.data[i];
        break;
      }
      case pooling::PoolKind::Attention: {
        pg = pooling::pool_attention_backward(seq, attn_w, go);
        for (size_t i = 0; i < attn_gw.data.size(); ++i) attn_gw.data[i] += pg.grad_w.data[i];
        break;
      }
    }
    // undo the frequency average: spread each frame gradient uniformly over bins
    for (int64_t y = 0; y < h; ++y)
      for (int64_t ch = 0; ch < c; ++ch) {
        const float gv = pg.grad_H.at2(y, ch) / static_cast<float>(w);
        for (int64_t x = 0; x < w; ++x) gtrunk.at4(s, ch, y, x) = gv;
      }
  }
  trunk_backward(gtrunk);
}

void Model::zero_grads() {
  for (auto& p : params())
    if (p.grad) p.grad->fill(0.0f);
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out, state;
  collect_named(out, state);
  return out;
}

std::vector<ParamRef> Model::state_tensors() {
  std::vector<ParamRef> out, state;
  collect_named(out, state);
  return state;
}

void Model::collect_named(std::vector<ParamRef>& params, std::vector<ParamRef>& state) {
  if (config.arch == Arch::ResNet22) {
    conv_blocks[0].collect("stem", params, state);
    for (size_t i = 0; i < res_blocks.size(); ++i)
      res_blocks[i].collect("res" + std::to_string(i), params, state);
    conv_blocks[1].collect("tail", params, state);
  } else {
    for (size_t i = 0; i < conv_blocks.size(); ++i)
      conv_blocks[i].collect("block" + std::to_string(i), params, state);
  }
  if (config.pool == pooling::PoolKind::Statistic) {
    params.push_back({"head.w", &head_w, &head_gw});
    params.push_back({"head.b", &head_b, &head_gb});
  } else if (config.pool == pooling::PoolKind::Attention) {
    params.push_back({"head.attn", &attn_w, &attn_gw});
  }
  params.push_back({"cls.w", &cls_w, &cls_gw});
  params.push_back({"cls.b", &cls_b, &cls_gb});
}

int64_t Model::param_count() {
  int64_t count = 0;
  for (auto& p : params()) count += p.value->size();
  // quantized conv/linear weights live in int8 side tensors
  auto add_q = [&count](const std::optional<QuantizedTensor>& q) {
    if (q) count += static_cast<int64_t>(q->values.size());
  };
  for (auto& cb : conv_blocks) {
    add_q(cb.conv1.qw);
    add_q(cb.conv2.qw);
  }
  for (auto& rb : res_blocks) {
    add_q(rb.conv1.qw);
    add_q(rb.conv2.qw);
  }
  add_q(head_qw);
  add_q(cls_qw);
  return count;
}

Model build_model(const ModelConfig& config, uint64_t seed) {
  Model m;
  m.config = config;
  std::mt19937_64 rng(seed);

  auto make_conv_block = [&](int64_t ci, int64_t co, bool pool) {
    ConvBlock cb;
    init_conv(cb.conv1, ci, co, rng);
    init_bn(cb.bn1, co);
    init_conv(cb.conv2, co, co, rng);
    init_bn(cb.bn2, co);
    cb.pool_after = pool;
    return cb;
  };

  int64_t d = 0;
  if (config.arch == Arch::CNN10 || config.arch == Arch::CNN14) {
    std::vector<int64_t> base = {64, 128, 256, 512};
    if (config.arch == Arch::CNN14) {
      base.push_back(1024);
      base.push_back(2048);
    }
    int64_t ci = 1;
    for (int64_t b : base) {
      const int64_t co = scaled_width(b, config.width_mult);
      m.conv_blocks.push_back(make_conv_block(ci, co, true));
      ci = co;
    }
    d = ci;
    m.pool_stages = static_cast<int>(base.size());
  } else {
    const int64_t stem = scaled_width(64, config.width_mult);
    m.conv_blocks.push_back(make_conv_block(1, stem, true));
    const std::vector<int64_t> widths = {64, 64, 128, 128, 256, 256, 512, 512};
    int64_t ci = stem;
    for (size_t i = 0; i < widths.size(); ++i) {
      const int64_t co = scaled_width(widths[i], config.width_mult);
      ResBlock rb;
      init_conv(rb.conv1, ci, co, rng);
      init_bn(rb.bn1, co);
      init_conv(rb.conv2, co, co, rng);
      init_bn(rb.bn2, co);
      if (ci != co) {
        rb.has_projection = true;
        rb.proj_w = Tensor({co, ci});
        rb.proj_gw = Tensor({co, ci});
        he_uniform(rb.proj_w, ci, rng);
      }
      rb.pool_after = (i % 2 == 1);  // after blocks 2, 4, 6, 8
      m.res_blocks.push_back(std::move(rb));
      ci = co;
    }
    const int64_t tail = scaled_width(2048, config.width_mult);
    m.conv_blocks.push_back(make_conv_block(ci, tail, false));
    d = tail;
    m.pool_stages = 5;  // stem pool + 4 interleaved pools
  }
  m.embed_dim = static_cast<int>(d);

  if (config.pool == pooling::PoolKind::Statistic) {
    m.head_w = Tensor({d, 2 * d});
    m.head_b = Tensor({d});
    m.head_gw = Tensor(m.head_w.shape);
    m.head_gb = Tensor(m.head_b.shape);
    he_uniform(m.head_w, 2 * d, rng);
  } else if (config.pool == pooling::PoolKind::Attention) {
    if (d % config.attn_heads != 0)
      throw HeadMismatch("embed dim " + std::to_string(d) + " not divisible by " +
                         std::to_string(config.attn_heads) + " heads");
    m.attn_w = Tensor({config.attn_heads, d / config.attn_heads});
    m.attn_gw = Tensor(m.attn_w.shape);
    he_uniform(m.attn_w, d / config.attn_heads, rng);
  }
  m.cls_w = Tensor({config.n_classes, d});
  m.cls_b = Tensor({config.n_classes});
  m.cls_gw = Tensor(m.cls_w.shape);
  m.cls_gb = Tensor(m.cls_b.shape);
  he_uniform(m.cls_w, d, rng);
  return m;
}

// ---------------------------------------------------------------------------
// ICNM container: magic, u32 version, canonical config text, tensor records
// (name, dtype f32|i8, shape, scale for i8, little-endian payload), CRC32.
// ---------------------------------------------------------------------------

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  buf.append(b, 4);
}

uint32_t get_u32(const std::string& buf, size_t& pos) {
  if (pos + 4 > buf.size()) throw CorruptHeader("container truncated");
  uint32_t v = static_cast<uint32_t>(static_cast<unsigned char>(buf[pos])) |
               (static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + 1])) << 8) |
               (static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + 2])) << 16) |
               (static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + 3])) << 24);
  pos += 4;
  return v;
}

struct Record {
  std::string name;
  const Tensor* f = nullptr;
  const QuantizedTensor* q = nullptr;
};

std::vector<Record> collect_records(Model& m) {
  std::vector<ParamRef> params, state;
  m.collect_named(params, state);
  // map conv/linear weight names to their quantized payloads when present
  std::map<std::string, const QuantizedTensor*> qmap;
  auto reg = [&qmap](const std::string& name, const std::optional<QuantizedTensor>& q) {
    if (q) qmap[name] = &*q;
  };
  std::vector<ParamRef> p2, s2;
  if (m.config.arch == Arch::ResNet22) {
    reg("stem.conv1.w", m.conv_blocks[0].conv1.qw);
    reg("stem.conv2.w", m.conv_blocks[0].conv2.qw);
    for (size_t i = 0; i < m.res_blocks.size(); ++i) {
      reg("res" + std::to_string(i) + ".conv1.w", m.res_blocks[i].conv1.qw);
      reg("res" + std::to_string(i) + ".conv2.w", m.res_blocks[i].conv2.qw);
    }
    reg("tail.conv1.w", m.conv_blocks[1].conv1.qw);
    reg("tail.conv2.w", m.conv_blocks[1].conv2.qw);
  } else {
    for (size_t i = 0; i < m.conv_blocks.size(); ++i) {
      reg("block" + std::to_string(i) + ".conv1.w", m.conv_blocks[i].conv1.qw);
      reg("block" + std::to_string(i) + ".conv2.w", m.conv_blocks[i].conv2.qw);
    }
  }
  reg("head.w", m.head_qw);
  reg("cls.w", m.cls_qw);

  std::vector<Record> recs;
  for (auto& p : params) {
    Record r;
    r.name = p.name;
    auto it = qmap.find(p.name);
    if (it != qmap.end()) r.q = it->second;
    else r.f = p.value;
    recs.push_back(r);
  }
  for (auto& s : state) recs.push_back({s.name, s.value, nullptr});
  return recs;
}

std::string config_text(const Model& m) {
  std::ostringstream os;
  os << "arch=" << arch_name(m.config.arch) << '\n'
     << "attn_heads=" << m.config.attn_heads << '\n'
     << "n_classes=" << m.config.n_classes << '\n'
     << "n_mels=" << m.config.n_mels << '\n'
     << "pool=" << pooling::pool_kind_name(m.config.pool) << '\n'
     << "quantized=" << (m.quantized ? 1 : 0) << '\n'
     << "width_den=" << m.config.width_mult.den << '\n'
     << "width_num=" << m.config.width_mult.num << '\n';
  return os.str();
}

}  // namespace

std::string serialize_model(const Model& model) {
  Model& m = const_cast<Model&>(model);
  std::string buf;
  buf.append("ICNM", 4);
  put_u32(buf, kVersion);
  const std::string cfg = config_text(m);
  put_u32(buf, static_cast<uint32_t>(cfg.size()));
  buf += cfg;
  auto recs = collect_records(m);
  put_u32(buf, static_cast<uint32_t>(recs.size()));
  for (auto& r : recs) {
    put_u32(buf, static_cast<uint32_t>(r.name.size()));
    buf += r.name;
    const auto& shape = r.q ? r.q->shape : r.f->shape;
    buf.push_back(r.q ? 1 : 0);
    put_u32(buf, static_cast<uint32_t>(shape.size()));
    for (int64_t dmm : shape) put_u32(buf, static_cast<uint32_t>(dmm));
    if (r.q) {
      static_assert(sizeof(double) == 8);
      double sc = static_cast<double>(r.q->scale);
      char sb[8];
      std::memcpy(sb, &sc, 8);
      buf.append(sb, 8);
      buf.append(reinterpret_cast<const char*>(r.q->values.data()), r.q->values.size());
    } else {
      buf.append(reinterpret_cast<const char*>(r.f->data.data()),
                 r.f->data.size() * sizeof(float));
    }
  }
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
                    static_cast<uInt>(buf.size()));
  put_u32(buf, static_cast<uint32_t>(crc));
  return buf;
}

void save_model(const Model& model, const std::string& path) {
  const std::string buf = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 12 || buf.compare(0, 4, "ICNM") != 0)
    throw BadMagic("not an ICNM model file: " + path);
  size_t pos = 4;
  const uint32_t version = get_u32(buf, pos);
  if (version != kVersion)
    throw VersionMismatch("container version " + std::to_string(version));
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(buf.data()),
                    static_cast<uInt>(buf.size() - 4));
  size_t tail = buf.size() - 4;
  uint32_t stored = get_u32(buf, tail);
  if (static_cast<uint32_t>(crc) != stored)
    throw ChecksumMismatch("CRC32 mismatch in " + path);
  const uint32_t cfg_len = get_u32(buf, pos);
  if (pos + cfg_len > buf.size()) throw CorruptHeader("config block truncated");
  std::istringstream cfg_in(buf.substr(pos, cfg_len));
  pos += cfg_len;

  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(cfg_in, line)) {
    auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ModelConfig config;
  config.arch = arch_from_name(kv.at("arch"));
  config.attn_heads = std::stoi(kv.at("attn_heads"));
  config.n_classes = std::stoi(kv.at("n_classes"));
  config.n_mels = std::stoi(kv.at("n_mels"));
  config.pool = pooling::pool_kind_from_name(kv.at("pool"));
  config.width_mult = {std::stoll(kv.at("width_num")), std::stoll(kv.at("width_den"))};
  const bool quantized = kv.at("quantized") == "1";

  Model m = build_model(config, 0);
  m.quantized = quantized;

  std::vector<ParamRef> params, state;
  m.collect_named(params, state);
  std::map<std::string, ParamRef*> by_name;
  for (auto& p : params) by_name[p.name] = &p;
  for (auto& s : state) by_name[s.name] = &s;

  auto quantized_slot = [&m](const std::string& name) -> std::optional<QuantizedTensor>* {
    auto find_conv = [&name](ConvBlock& cb, const std::string& prefix)
        -> std::optional<QuantizedTensor>* {
      if (name == prefix + ".conv1.w") return &cb.conv1.qw;
      if (name == prefix + ".conv2.w") return &cb.conv2.qw;
      return nullptr;
    };
    if (m.config.arch == Arch::ResNet22) {
      if (auto* s = find_conv(m.conv_blocks[0], "stem")) return s;
      for (size_t i = 0; i < m.res_blocks.size(); ++i) {
        const std::string p = "res" + std::to_string(i);
        if (name == p + ".conv1.w") return &m.res_blocks[i].conv1.qw;
        if (name == p + ".conv2.w") return &m.res_blocks[i].conv2.qw;
      }
      if (auto* s = find_conv(m.conv_blocks[1], "tail")) return s;
    } else {
      for (size_t i = 0; i < m.conv_blocks.size(); ++i)
        if (auto* s = find_conv(m.conv_blocks[i], "block" + std::to_string(i))) return s;
    }
    if (name == "head.w") return &m.head_qw;
    if (name == "cls.w") return &m.cls_qw;
    return nullptr;
  };

  const uint32_t n_recs = get_u32(buf, pos);
  for (uint32_t r = 0; r < n_recs; ++r) {
    const uint32_t name_len = get_u32(buf, pos);
    if (pos + name_len > buf.size()) throw CorruptHeader("record name truncated");
    const std::string name = buf.substr(pos, name_len);
    pos += name_len;
    if (pos >= buf.size()) throw CorruptHeader("record dtype truncated");
    const uint8_t dtype = static_cast<uint8_t>(buf[pos++]);
    const uint32_t ndim = get_u32(buf, pos);
    std::vector<int64_t> shape;
    for (uint32_t i = 0; i < ndim; ++i) shape.push_back(get_u32(buf, pos));
    const int64_t numel = Tensor::numel(shape);

    auto it = by_name.find(name);
    if (it == by_name.end()) throw CorruptHeader("unknown tensor record " + name);
    if (dtype == 1) {
      if (pos + 8 + static_cast<size_t>(numel) > buf.size())
        throw CorruptHeader("quantized payload truncated");
      double scale;
      std::memcpy(&scale, buf.data() + pos, 8);
      pos += 8;
      QuantizedTensor q;
      q.shape = shape;
      q.scale = static_cast<float>(scale);
      q.values.resize(static_cast<size_t>(numel));
      std::memcpy(q.values.data(), buf.data() + pos, static_cast<size_t>(numel));
      pos += static_cast<size_t>(numel);
      auto* slot = quantized_slot(name);
      if (!slot) throw CorruptHeader("tensor " + name + " cannot be quantized");
      *slot = std::move(q);
      it->second->value->shape = shape;
      it->second->value->data.clear();  // float payload replaced by int8 side tensor
    } else {
      if (it->second->value->shape != shape)
        throw CorruptHeader("shape mismatch for tensor " + name);
      if (pos + static_cast<size_t>(numel) * 4 > buf.size())
        throw CorruptHeader("payload truncated for " + name);
      std::memcpy(it->second->value->data.data(), buf.data() + pos,
                  static_cast<size_t>(numel) * 4);
      pos += static_cast<size_t>(numel) * 4;
    }
  }
  return m;
}

SizeReport model_size(Model& model) {
  SizeReport r;
  r.param_count = model.param_count();
  r.serialized_bytes = static_cast<int64_t>(serialize_model(model).size());
  return r;
}

}  // namespace models
}  // namespace icn
