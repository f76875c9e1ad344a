// SPDX-License-Identifier: Apache-2.0
#include "icn/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "icn/error.hpp"

namespace icn {
namespace pooling {

namespace {

void check_seq(const Tensor& H) {
  if (H.ndim() != 2) throw ShapeMismatch("embedding sequence must be N x D");
  if (H.dim(0) < 1) throw EmptySequence("pooling needs at least one instance");
}

// mean and population variance per channel, accumulated in double
void mean_var(const Tensor& H, std::vector<double>& mean, std::vector<double>& var) {
  const int64_t n = H.dim(0), d = H.dim(1);
  mean.assign(static_cast<size_t>(d), 0.0);
  var.assign(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += H.at2(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) {
      const double dv = H.at2(i, j) - mean[static_cast<size_t>(j)];
      var[static_cast<size_t>(j)] += dv * dv;
    }
  for (double& v : var) v /= static_cast<double>(n);
}

// per-head softmax weights p (N x K) for the attention head
void attention_weights(const Tensor& H, const Tensor& heads, std::vector<double>& p) {
  const int64_t n = H.dim(0), d = H.dim(1);
  const int64_t k = heads.dim(0), dk = heads.dim(1);
  if (d % k != 0 || dk != d / k)
    throw HeadMismatch("channel count " + std::to_string(d) + " not divisible into " +
                       std::to_string(k) + " heads");
  p.assign(static_cast<size_t>(n * k), 0.0);
  for (int64_t hk = 0; hk < k; ++hk) {
    double mx = -1e300;
    for (int64_t i = 0; i < n; ++i) {
      double e = 0.0;
      for (int64_t j = 0; j < dk; ++j)
        e += static_cast<double>(heads.at2(hk, j)) * H.at2(i, hk * dk + j);
      p[static_cast<size_t>(i * k + hk)] = e;
      mx = std::max(mx, e);
    }
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double a = std::exp(p[static_cast<size_t>(i * k + hk)] - mx);
      p[static_cast<size_t>(i * k + hk)] = a;
      sum += a;
    }
    for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i * k + hk)] /= sum;
  }
}

}  // namespace

const char* pool_kind_name(PoolKind k) {
  switch (k) {
    case PoolKind::Max: return "max";
    case PoolKind::Avg: return "avg";
    case PoolKind::AddMaxAvg: return "add";
    case PoolKind::Statistic: return "statistic";
    case PoolKind::Attention: return "attention";
  }
  return "?";
}

PoolKind pool_kind_from_name(const std::string& name) {
  if (name == "max") return PoolKind::Max;
  if (name == "avg") return PoolKind::Avg;
  if (name == "add" || name == "max+avg") return PoolKind::AddMaxAvg;
  if (name == "statistic") return PoolKind::Statistic;
  if (name == "attention") return PoolKind::Attention;
  throw ConfigError("unknown pooling head: " + name);
}

std::vector<float> pool_max(const Tensor& H) {
  check_seq(H);
  const int64_t n = H.dim(0), d = H.dim(1);
  std::vector<float> out(static_cast<size_t>(d));
  for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(j)] = H.at2(0, j);
  for (int64_t i = 1; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out[static_cast<size_t>(j)] = std::max(out[static_cast<size_t>(j)], H.at2(i, j));
  return out;
}

std::vector<float> pool_avg(const Tensor& H) {
  check_seq(H);
  const int64_t n = H.dim(0), d = H.dim(1);
  std::vector<double> acc(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) acc[static_cast<size_t>(j)] += H.at2(i, j);
  std::vector<float> out(static_cast<size_t>(d));
  for (int64_t j = 0; j < d; ++j)
    out[static_cast<size_t>(j)] = static_cast<float>(acc[static_cast<size_t>(j)] / n);
  return out;
}

std::vector<float> pool_add(const Tensor& H) {
  std::vector<float> mx = pool_max(H);
  const std::vector<float> av = pool_avg(H);
  for (size_t j = 0; j < mx.size(); ++j) mx[j] += av[j];
  return mx;
}

std::vector<float> pool_statistic(const Tensor& H, const Tensor& fc_weight,
                                  const Tensor& fc_bias) {
  check_seq(H);
  const int64_t d = H.dim(1);
  if (fc_weight.ndim() != 2 || fc_weight.dim(1) != 2 * d)
    throw ShapeMismatch("statistic fc weight must be D_out x 2D");
  const int64_t dout = fc_weight.dim(0);
  if (fc_bias.size() != dout) throw ShapeMismatch("statistic fc bias size");
  std::vector<double> mean, var;
  mean_var(H, mean, var);
  std::vector<float> out(static_cast<size_t>(dout));
  for (int64_t o = 0; o < dout; ++o) {
    double acc = fc_bias.data[static_cast<size_t>(o)];
    for (int64_t j = 0; j < d; ++j) {
      acc += static_cast<double>(fc_weight.at2(o, j)) * mean[static_cast<size_t>(j)];
      acc += static_cast<double>(fc_weight.at2(o, d + j)) * var[static_cast<size_t>(j)];
    }
    out[static_cast<size_t>(o)] = static_cast<float>(acc);
  }
  return out;
}

std::vector<float> pool_attention(const Tensor& H, const Tensor& heads) {
  check_seq(H);
  const int64_t n = H.dim(0), d = H.dim(1);
  const int64_t k = heads.dim(0), dk = heads.dim(1);
  std::vector<double> p;
  attention_weights(H, heads, p);
  std::vector<float> out(static_cast<size_t>(d), 0.0f);
  for (int64_t hk = 0; hk < k; ++hk)
    for (int64_t j = 0; j < dk; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i)
        acc += p[static_cast<size_t>(i * k + hk)] * H.at2(i, hk * dk + j);
      out[static_cast<size_t>(hk * dk + j)] = static_cast<float>(acc);
    }
  return out;
}

PoolGrads pool_max_backward(const Tensor& H, const std::vector<float>& grad_out) {
  check_seq(H);
  const int64_t n = H.dim(0), d = H.dim(1);
  if (static_cast<int64_t>(grad_out.size()) != d) throw ShapeMismatch("pool grad size");
  PoolGrads g;
  g.grad_H = Tensor({n, d});
  for (int64_t j = 0; j < d; ++j) {
    // ties route to the lowest index
    int64_t arg = 0;
    for (int64_t i = 1; i < n; ++i)
      if (H.at2(i, j) > H.at2(arg, j)) arg = i;
    g.grad_H.at2(arg, j) = grad_out[static_cast<size_t>(j)];
  }
  return g;
}

PoolGrads pool_avg_backward(const Tensor& H, const std::vector<float>& grad_out) {
  check_seq(H);
  const int64_t n = H.dim(0), d = H.dim(1);
  if (static_cast<int64_t>(grad_out.size()) != d) throw ShapeMismatch("pool grad size");
  PoolGrads g;
  g.grad_H = Tensor({n, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      g.grad_H.at2(i, j) = grad_out[static_cast<size_t>(j)] / static_cast<float>(n);
  return g;
}

PoolGrads pool_add_backward(const Tensor& H, const std::vector<float>& grad_out) {
  PoolGrads gm = pool_max_backward(H, grad_out);
  const PoolGrads ga = pool_avg_backward(H, grad_out);
  for (size_t i = 0; i < gm.grad_H.data.size(); ++i)
    gm.grad_H.data[i] += ga.grad_H.data[i];
  return gm;
}

PoolGrads pool_statistic_backward(const Tensor& H, const Tensor& fc_weight,
                                  const std::vector<float>& grad_out) {
  check_seq(H);
  const int64_t n = H.dim(0), d = H.dim(1);
  const int64_t dout = fc_weight.dim(0);
  if (static_cast<int64_t>(grad_out.size()) != dout) throw ShapeMismatch("pool grad size");
  std::vector<double> mean, var;
  mean_var(H, mean, var);

  PoolGrads g;
  g.grad_H = Tensor({n, d});
  g.grad_w = Tensor(fc_weight.shape);
  g.grad_b = Tensor({dout});
  // grads through the linear layer
  std::vector<double> gmean(static_cast<size_t>(d), 0.0), gvar(static_cast<size_t>(d), 0.0);
  for (int64_t o = 0; o < dout; ++o) {
    const double go = grad_out[static_cast<size_t>(o)];
    g.grad_b.data[static_cast<size_t>(o)] = static_cast<float>(go);
    for (int64_t j = 0; j < d; ++j) {
      g.grad_w.at2(o, j) = static_cast<float>(go * mean[static_cast<size_t>(j)]);
      g.grad_w.at2(o, d + j) = static_cast<float>(go * var[static_cast<size_t>(j)]);
      gmean[static_cast<size_t>(j)] += go * fc_weight.at2(o, j);
      gvar[static_cast<size_t>(j)] += go * fc_weight.at2(o, d + j);
    }
  }
  // d var / d H[i][j] = 2 (H[i][j] - mean[j]) / N; d mean / d H[i][j] = 1/N
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) {
      const double dv = H.at2(i, j) - mean[static_cast<size_t>(j)];
      g.grad_H.at2(i, j) = static_cast<float>(
          gmean[static_cast<size_t>(j)] / n + gvar[static_cast<size_t>(j)] * 2.0 * dv / n);
    }
  return g;
}

PoolGrads pool_attention_backward(const Tensor& H, const Tensor& heads,
                                  const std::vector<float>& grad_out) {
  check_seq(H);
  const int64_t n = H.dim(0), d = H.dim(1);
  const int64_t k = heads.dim(0), dk = heads.dim(1);
  if (static_cast<int64_t>(grad_out.size()) != d) throw ShapeMismatch("pool grad size");
  std::vector<double> p;
  attention_weights(H, heads, p);

  PoolGrads g;
  g.grad_H = Tensor({n, d});
  g.grad_w = Tensor(heads.shape);

  for (int64_t hk = 0; hk < k; ++hk) {
    // block output
    std::vector<double> out(static_cast<size_t>(dk), 0.0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dk; ++j)
        out[static_cast<size_t>(j)] += p[static_cast<size_t>(i * k + hk)] * H.at2(i, hk * dk + j);
    for (int64_t i = 0; i < n; ++i) {
      const double pi = p[static_cast<size_t>(i * k + hk)];
      // grad through the softmax logit e_i = w . x_i
      double ge = 0.0;
      for (int64_t j = 0; j < dk; ++j)
        ge += static_cast<double>(grad_out[static_cast<size_t>(hk * dk + j)]) *
              (H.at2(i, hk * dk + j) - out[static_cast<size_t>(j)]);
      ge *= pi;
      for (int64_t j = 0; j < dk; ++j) {
        g.grad_H.at2(i, hk * dk + j) = static_cast<float>(
            pi * grad_out[static_cast<size_t>(hk * dk + j)] + ge * heads.at2(hk, j));
        g.grad_w.at2(hk, j) += static_cast<float>(ge * H.at2(i, hk * dk + j));
      }
    }
  }
  return g;
}

}  // namespace pooling
}  // namespace icn
