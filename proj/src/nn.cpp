// SPDX-License-Identifier: Apache-2.0
#include "icn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "icn/error.hpp"

namespace icn {
namespace nn {

namespace {

void check_conv_shapes(const Tensor& input, const Tensor& weight) {
  if (input.ndim() != 4) throw ShapeMismatch("conv input must be 4-d");
  if (weight.ndim() != 4 || weight.dim(2) != 3 || weight.dim(3) != 3)
    throw ShapeMismatch("conv weight must be Co x Ci x 3 x 3");
  if (input.dim(1) != weight.dim(1))
    throw ShapeMismatch("conv channel mismatch");
}

// im2col for 3x3/pad1/stride1: output (Ci*9) x (H*W) for one sample
void im2col3x3(const float* x, int64_t ci, int64_t h, int64_t w, float* cols) {
  const int64_t hw = h * w;
  for (int64_t c = 0; c < ci; ++c) {
    const float* xc = x + c * hw;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        float* row = cols + ((c * 3 + (dy + 1)) * 3 + (dx + 1)) * hw;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + dy;
          float* dst = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0f);
            continue;
          }
          const float* src = xc + sy * w;
          const int64_t x0 = std::max<int64_t>(0, -dx);
          const int64_t x1 = std::min<int64_t>(w, w - dx);
          if (x0 > 0) dst[0] = 0.0f;
          for (int64_t xx = x0; xx < x1; ++xx) dst[xx] = src[xx + dx];
          if (x1 < w) dst[w - 1] = 0.0f;
        }
      }
    }
  }
}

// accumulate cols from a (Ci*9) x (H*W) gradient back into an image
void col2im3x3(const float* cols, int64_t ci, int64_t h, int64_t w, float* x) {
  const int64_t hw = h * w;
  std::fill(x, x + ci * hw, 0.0f);
  for (int64_t c = 0; c < ci; ++c) {
    float* xc = x + c * hw;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const float* row = cols + ((c * 3 + (dy + 1)) * 3 + (dx + 1)) * hw;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          float* dst = xc + sy * w;
          const int64_t x0 = std::max<int64_t>(0, -dx);
          const int64_t x1 = std::min<int64_t>(w, w - dx);
          const float* src = row + y * w;
          for (int64_t xx = x0; xx < x1; ++xx) dst[xx + dx] += src[xx];
        }
      }
    }
  }
}

// C = A (m x k) * B (k x n) + broadcast bias (may be null), C preset by caller? No: overwritten.
void gemm(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n,
          const float* bias) {
  for (int64_t i = 0; i < m; ++i) {
    float* ci = c + i * n;
    const float bv = bias ? bias[i] : 0.0f;
    std::fill(ci, ci + n, bv);
    const float* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const float av = ai[p];
      if (av == 0.0f) continue;
      const float* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

Tensor conv3x3_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  check_conv_shapes(input, weight);
  const int64_t n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t co = weight.dim(0);
  if (bias.size() != co) throw ShapeMismatch("conv bias size");
  Tensor out({n, co, h, w});
  const int64_t k = ci * 9, hw = h * w;
  std::vector<float> cols(static_cast<size_t>(k * hw));
  for (int64_t s = 0; s < n; ++s) {
    im2col3x3(input.ptr() + s * ci * hw, ci, h, w, cols.data());
    gemm(weight.ptr(), cols.data(), out.ptr() + s * co * hw, co, k, hw, bias.ptr());
  }
  return out;
}

std::tuple<Tensor, Tensor, Tensor> conv3x3_backward(const Tensor& input,
                                                    const Tensor& weight,
                                                    const Tensor& grad_out) {
  check_conv_shapes(input, weight);
  const int64_t n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t co = weight.dim(0);
  if (grad_out.shape != std::vector<int64_t>{n, co, h, w})
    throw ShapeMismatch("conv grad_out shape");
  const int64_t k = ci * 9, hw = h * w;

  Tensor gx({n, ci, h, w}), gw({co, ci, 3, 3}), gb({co});
  std::vector<float> cols(static_cast<size_t>(k * hw));
  std::vector<float> gcols(static_cast<size_t>(k * hw));

  for (int64_t s = 0; s < n; ++s) {
    const float* gy = grad_out.ptr() + s * co * hw;
    im2col3x3(input.ptr() + s * ci * hw, ci, h, w, cols.data());
    // grad_weight += gy * cols^T ; grad_bias += row sums of gy
    for (int64_t o = 0; o < co; ++o) {
      const float* gyo = gy + o * hw;
      double acc = 0.0;
      for (int64_t j = 0; j < hw; ++j) acc += gyo[j];
      gb.data[static_cast<size_t>(o)] += static_cast<float>(acc);
      float* gwo = gw.ptr() + o * k;
      for (int64_t p = 0; p < k; ++p) {
        const float* cp = cols.data() + p * hw;
        double dot = 0.0;
        for (int64_t j = 0; j < hw; ++j) dot += static_cast<double>(gyo[j]) * cp[j];
        gwo[p] += static_cast<float>(dot);
      }
    }
    // grad_cols = W^T * gy, then scatter back to the image
    for (int64_t p = 0; p < k; ++p) {
      float* gp = gcols.data() + p * hw;
      std::fill(gp, gp + hw, 0.0f);
      for (int64_t o = 0; o < co; ++o) {
        const float wv = weight.ptr()[o * k + p];
        if (wv == 0.0f) continue;
        const float* gyo = gy + o * hw;
        for (int64_t j = 0; j < hw; ++j) gp[j] += wv * gyo[j];
      }
    }
    col2im3x3(gcols.data(), ci, h, w, gx.ptr() + s * ci * hw);
  }
  return {std::move(gx), std::move(gw), std::move(gb)};
}

Tensor batchnorm_forward(const Tensor& input, BatchNormParams& p, bool train,
                         BatchNormCache* cache) {
  if (input.ndim() != 4) throw ShapeMismatch("batchnorm input must be 4-d");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (p.gamma.size() != c) throw ShapeMismatch("batchnorm gamma size");
  const int64_t m = n * h * w;
  Tensor out(input.shape);
  if (train && m < 2) throw DegenerateBatch("batchnorm train mode needs N*H*W >= 2");

  std::vector<double> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (train) {
      double acc = 0.0;
      for (int64_t s = 0; s < n; ++s) {
        const float* x = input.ptr() + (s * c + ch) * h * w;
        for (int64_t j = 0; j < h * w; ++j) acc += x[j];
      }
      mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (int64_t s = 0; s < n; ++s) {
        const float* x = input.ptr() + (s * c + ch) * h * w;
        for (int64_t j = 0; j < h * w; ++j) {
          const double d = x[j] - mu;
          vacc += d * d;
        }
      }
      var = vacc / static_cast<double>(m);
      p.running_mean.data[static_cast<size_t>(ch)] = static_cast<float>(
          p.momentum * p.running_mean.data[static_cast<size_t>(ch)] + (1.0 - p.momentum) * mu);
      p.running_var.data[static_cast<size_t>(ch)] = static_cast<float>(
          p.momentum * p.running_var.data[static_cast<size_t>(ch)] + (1.0 - p.momentum) * var);
    } else {
      mu = p.running_mean.data[static_cast<size_t>(ch)];
      var = p.running_var.data[static_cast<size_t>(ch)];
    }
    mean[static_cast<size_t>(ch)] = mu;
    inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + p.eps);
  }

  Tensor x_hat;
  if (cache) x_hat = Tensor(input.shape);
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* x = input.ptr() + (s * c + ch) * h * w;
      float* y = out.ptr() + (s * c + ch) * h * w;
      float* xh = cache ? x_hat.ptr() + (s * c + ch) * h * w : nullptr;
      const float g = p.gamma.data[static_cast<size_t>(ch)];
      const float b = p.beta.data[static_cast<size_t>(ch)];
      const float mu = static_cast<float>(mean[static_cast<size_t>(ch)]);
      const float is = static_cast<float>(inv_std[static_cast<size_t>(ch)]);
      for (int64_t j = 0; j < h * w; ++j) {
        const float hat = (x[j] - mu) * is;
        if (xh) xh[j] = hat;
        y[j] = g * hat + b;
      }
    }
  }
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

std::tuple<Tensor, Tensor, Tensor> batchnorm_backward(const Tensor& grad_out,
                                                      const BatchNormParams& p,
                                                      const BatchNormCache& cache) {
  const Tensor& x_hat = cache.x_hat;
  if (!grad_out.same_shape(x_hat)) throw ShapeMismatch("batchnorm grad shape");
  const int64_t n = grad_out.dim(0), c = grad_out.dim(1), h = grad_out.dim(2),
                w = grad_out.dim(3);
  const int64_t m = n * h * w;
  Tensor gx(grad_out.shape), ggamma({c}), gbeta({c});
  for (int64_t ch = 0; ch < c; ++ch) {
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int64_t s = 0; s < n; ++s) {
      const float* gy = grad_out.ptr() + (s * c + ch) * h * w;
      const float* xh = x_hat.ptr() + (s * c + ch) * h * w;
      for (int64_t j = 0; j < h * w; ++j) {
        sum_gy += gy[j];
        sum_gy_xhat += static_cast<double>(gy[j]) * xh[j];
      }
    }
    ggamma.data[static_cast<size_t>(ch)] = static_cast<float>(sum_gy_xhat);
    gbeta.data[static_cast<size_t>(ch)] = static_cast<float>(sum_gy);
    const double g = p.gamma.data[static_cast<size_t>(ch)];
    const double is = cache.inv_std[static_cast<size_t>(ch)];
    const double inv_m = 1.0 / static_cast<double>(m);
    for (int64_t s = 0; s < n; ++s) {
      const float* gy = grad_out.ptr() + (s * c + ch) * h * w;
      const float* xh = x_hat.ptr() + (s * c + ch) * h * w;
      float* gxp = gx.ptr() + (s * c + ch) * h * w;
      for (int64_t j = 0; j < h * w; ++j) {
        const double t = gy[j] - inv_m * sum_gy - inv_m * sum_gy_xhat * xh[j];
        gxp[j] = static_cast<float>(g * is * t);
      }
    }
  }
  return {std::move(gx), std::move(ggamma), std::move(gbeta)};
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data) v = std::max(v, 0.0f);
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (!input.same_shape(grad_out)) throw ShapeMismatch("relu grad shape");
  Tensor gx(input.shape);
  for (size_t i = 0; i < input.data.size(); ++i)
    gx.data[i] = input.data[i] > 0.0f ? grad_out.data[i] : 0.0f;
  return gx;
}

Tensor avgpool2x2_forward(const Tensor& input) {
  if (input.ndim() != 4) throw ShapeMismatch("avgpool input must be 4-d");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor out({n, c, ho, wo});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < ho; ++y)
        for (int64_t x = 0; x < wo; ++x) {
          double acc = 0.0;
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
              // edge replication for odd extents
              const int64_t sy = std::min<int64_t>(2 * y + i, h - 1);
              const int64_t sx = std::min<int64_t>(2 * x + j, w - 1);
              acc += input.at4(s, ch, sy, sx);
            }
          out.at4(s, ch, y, x) = static_cast<float>(acc / 4.0);
        }
  return out;
}

Tensor avgpool2x2_backward(const Tensor& input, const Tensor& grad_out) {
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  if (grad_out.shape != std::vector<int64_t>{n, c, ho, wo})
    throw ShapeMismatch("avgpool grad shape");
  Tensor gx({n, c, h, w});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < ho; ++y)
        for (int64_t x = 0; x < wo; ++x) {
          const float g = grad_out.at4(s, ch, y, x) / 4.0f;
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
              const int64_t sy = std::min<int64_t>(2 * y + i, h - 1);
              const int64_t sx = std::min<int64_t>(2 * x + j, w - 1);
              gx.at4(s, ch, sy, sx) += g;
            }
        }
  return gx;
}

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.ndim() != 2 || weight.ndim() != 2 || input.dim(1) != weight.dim(1))
    throw ShapeMismatch("linear shapes");
  const int64_t n = input.dim(0), d = input.dim(1), k = weight.dim(0);
  if (bias.size() != k) throw ShapeMismatch("linear bias size");
  Tensor out({n, k});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t o = 0; o < k; ++o) {
      double acc = bias.data[static_cast<size_t>(o)];
      const float* x = input.ptr() + i * d;
      const float* w = weight.ptr() + o * d;
      for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(x[j]) * w[j];
      out.at2(i, o) = static_cast<float>(acc);
    }
  return out;
}

std::tuple<Tensor, Tensor, Tensor> linear_backward(const Tensor& input,
                                                   const Tensor& weight,
                                                   const Tensor& grad_out) {
  const int64_t n = input.dim(0), d = input.dim(1), k = weight.dim(0);
  if (grad_out.shape != std::vector<int64_t>{n, k})
    throw ShapeMismatch("linear grad_out shape");
  Tensor gx({n, d}), gw({k, d}), gb({k});
  for (int64_t o = 0; o < k; ++o) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += grad_out.at2(i, o);
    gb.data[static_cast<size_t>(o)] = static_cast<float>(acc);
    for (int64_t j = 0; j < d; ++j) {
      double dot = 0.0;
      for (int64_t i = 0; i < n; ++i)
        dot += static_cast<double>(grad_out.at2(i, o)) * input.at2(i, j);
      gw.at2(o, j) = static_cast<float>(dot);
    }
  }
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) {
      double dot = 0.0;
      for (int64_t o = 0; o < k; ++o)
        dot += static_cast<double>(grad_out.at2(i, o)) * weight.at2(o, j);
      gx.at2(i, j) = static_cast<float>(dot);
    }
  return {std::move(gx), std::move(gw), std::move(gb)};
}

Tensor softmax(const Tensor& logits) {
  if (logits.ndim() != 2) throw ShapeMismatch("softmax input must be 2-d");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  Tensor out({n, k});
  for (int64_t i = 0; i < n; ++i) {
    float mx = logits.at2(i, 0);
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, logits.at2(i, j));
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(logits.at2(i, j)) - mx);
      out.at2(i, j) = static_cast<float>(e);
      sum += e;
    }
    for (int64_t j = 0; j < k; ++j)
      out.at2(i, j) = static_cast<float>(out.at2(i, j) / sum);
  }
  return out;
}

std::pair<double, Tensor> cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  const int64_t n = probs.dim(0), k = probs.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeMismatch("label count vs batch size");
  for (int64_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (int64_t j = 0; j < k; ++j) row += probs.at2(i, j);
    if (std::fabs(row - 1.0) > 1e-5)
      throw NotNormalized("probability row " + std::to_string(i) + " sums to " +
                          std::to_string(row));
  }
  double loss = 0.0;
  Tensor grad({n, k});
  for (int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= k) throw ShapeMismatch("label out of range");
    loss += -std::log(std::max(static_cast<double>(probs.at2(i, y)), 1e-30));
    for (int64_t j = 0; j < k; ++j)
      grad.at2(i, j) = (probs.at2(i, j) - (j == y ? 1.0f : 0.0f)) / static_cast<float>(n);
  }
  return {loss / static_cast<double>(n), std::move(grad)};
}

void AdamState::init(const std::vector<const Tensor*>& params) {
  m.clear();
  v.clear();
  for (const Tensor* p : params) {
    m.emplace_back(p->shape);
    v.emplace_back(p->shape);
  }
  step = 0;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeMismatch("adam_step param/grad/state count");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    const Tensor& g = *grads[t];
    if (!p.same_shape(g) || !p.same_shape(state.m[t]))
      throw ShapeMismatch("adam_step tensor shapes");
    for (size_t i = 0; i < p.data.size(); ++i) {
      const double gi = g.data[i];
      const double mi = cfg.beta1 * state.m[t].data[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * state.v[t].data[i] + (1.0 - cfg.beta2) * gi * gi;
      state.m[t].data[i] = static_cast<float>(mi);
      state.v[t].data[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p.data[i] = static_cast<float>(p.data[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

GradCheckReport grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                           const Tensor& analytic, double tolerance, double h,
                           size_t max_coords, uint64_t seed) {
  if (!x.same_shape(analytic)) throw ShapeMismatch("grad_check analytic shape");
  std::vector<size_t> coords(x.data.size());
  for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (coords.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }
  GradCheckReport rep;
  Tensor probe = x;
  std::vector<double> fds(coords.size());
  double gmax = 1e-4;  // error floor for an all-zero gradient
  for (size_t c = 0; c < coords.size(); ++c) {
    const size_t i = coords[c];
    const float orig = probe.data[i];
    const float xp = static_cast<float>(static_cast<double>(orig) + h);
    const float xm = static_cast<float>(static_cast<double>(orig) - h);
    probe.data[i] = xp;
    const double fp = f(probe);
    probe.data[i] = xm;
    const double fm = f(probe);
    probe.data[i] = orig;
    // divide by the realized float step, not the nominal 2h
    const double denom = static_cast<double>(xp) - static_cast<double>(xm);
    fds[c] = (fp - fm) / denom;
    gmax = std::max({gmax, std::fabs(fds[c]),
                     std::fabs(static_cast<double>(analytic.data[i]))});
  }
  // error relative to the gradient scale: per-coordinate magnitude where it is
  // meaningful, the largest sampled gradient otherwise (keeps finite-difference
  // noise on near-zero coordinates from dominating the report)
  for (size_t c = 0; c < coords.size(); ++c) {
    const double a = analytic.data[coords[c]];
    const double fd = fds[c];
    const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), gmax});
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
  }
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

}  // namespace nn
}  // namespace icn
