// SPDX-License-Identifier: Apache-2.0
#include "icn/compress.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "icn/error.hpp"

namespace icn {

int8_t quantize_value(float v, float scale) {
  const float q = std::round(v / scale);  // round halves away from zero
  return static_cast<int8_t>(std::clamp(q, -127.0f, 127.0f));
}

QuantizedTensor quantize_tensor(const Tensor& t) {
  QuantizedTensor q;
  q.shape = t.shape;
  float mx = 0.0f;
  for (float v : t.data) mx = std::max(mx, std::fabs(v));
  q.scale = mx > 0.0f ? mx / 127.0f : 1.0f;
  q.values.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) q.values[i] = quantize_value(t.data[i], q.scale);
  return q;
}

Tensor dequantize(const QuantizedTensor& q) {
  Tensor t(q.shape);
  for (size_t i = 0; i < q.values.size(); ++i)
    t.data[i] = static_cast<float>(q.values[i]) * q.scale;
  return t;
}

namespace compress {

Tensor stack_features(const FeatureSet& set, const std::vector<size_t>& indices) {
  if (indices.empty()) throw EmptyDataset("empty batch");
  const Tensor& first = set.features[indices[0]];
  const int64_t t = first.dim(0), m = first.dim(1);
  Tensor batch({static_cast<int64_t>(indices.size()), 1, t, m});
  for (size_t i = 0; i < indices.size(); ++i) {
    const Tensor& f = set.features[indices[i]];
    if (f.dim(0) != t || f.dim(1) != m)
      throw ShapeMismatch("all clips in a batch must share feature dims");
    std::copy(f.data.begin(), f.data.end(), batch.ptr() + static_cast<int64_t>(i) * t * m);
  }
  return batch;
}

std::vector<int> predict(models::Model& model, const FeatureSet& set, int batch_size) {
  std::vector<int> out;
  for (size_t start = 0; start < set.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = start; i < std::min(set.size(), start + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(i);
    Tensor probs = model.forward_probs(stack_features(set, idx), false);
    for (int64_t r = 0; r < probs.dim(0); ++r) {
      int arg = 0;
      for (int64_t k = 1; k < probs.dim(1); ++k)
        if (probs.at2(r, k) > probs.at2(r, arg)) arg = static_cast<int>(k);
      out.push_back(arg);
    }
  }
  return out;
}

double evaluate_accuracy(models::Model& model, const FeatureSet& eval, int batch_size) {
  if (eval.size() == 0) throw EmptyDataset("empty eval set");
  const std::vector<int> pred = predict(model, eval, batch_size);
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == eval.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::pair<double, Tensor> kd_loss(const Tensor& student_logits,
                                  const Tensor& teacher_logits,
                                  const std::vector<int>& labels, double temperature,
                                  double lambda) {
  if (!student_logits.same_shape(teacher_logits))
    throw ShapeMismatch("student and teacher logits must have equal shape");
  const int64_t n = student_logits.dim(0), k = student_logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeMismatch("label count vs batch size");
  const double T = temperature;

  const Tensor ps = nn::softmax(student_logits);
  auto [ce, ce_grad] = nn::cross_entropy(ps, labels);

  // temperature-softened distributions
  Tensor ss(student_logits.shape), ts(teacher_logits.shape);
  for (size_t i = 0; i < ss.data.size(); ++i) {
    ss.data[i] = static_cast<float>(student_logits.data[i] / T);
    ts.data[i] = static_cast<float>(teacher_logits.data[i] / T);
  }
  const Tensor pss = nn::softmax(ss);
  const Tensor pts = nn::softmax(ts);

  double kl = 0.0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) {
      const double pt = pts.at2(i, j);
      if (pt > 0.0)
        kl += pt * (std::log(pt) - std::log(std::max(static_cast<double>(pss.at2(i, j)), 1e-30)));
    }
  kl /= static_cast<double>(n);

  const double loss = (1.0 - lambda) * ce + lambda * T * T * kl;
  Tensor grad(student_logits.shape);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j)
      grad.at2(i, j) = static_cast<float>(
          (1.0 - lambda) * ce_grad.at2(i, j) +
          lambda * T * (pss.at2(i, j) - pts.at2(i, j)) / static_cast<double>(n));
  return {loss, std::move(grad)};
}

std::vector<EpochStats> distill(models::Model& teacher, models::Model& student,
                                const FeatureSet& train, const FeatureSet* eval,
                                int epochs, const DistillConfig& cfg) {
  if (train.size() == 0) throw EmptyDataset("distillation needs a non-empty dataset");

  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads, cparams;
  for (auto& p : student.params()) {
    params.push_back(p.value);
    grads.push_back(p.grad);
    cparams.push_back(p.value);
  }
  nn::AdamState adam;
  adam.init(cparams);

  std::vector<EpochStats> history;
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      std::vector<size_t> idx(order.begin() + static_cast<long>(start),
                              order.begin() +
                                  static_cast<long>(std::min(order.size(),
                                                             start + static_cast<size_t>(cfg.batch_size))));
      Tensor batch = stack_features(train, idx);
      std::vector<int> labels;
      for (size_t i : idx) labels.push_back(train.labels[i]);

      Tensor t_logits = teacher.forward_logits(batch, false);
      Tensor s_logits = student.forward_logits(batch, true);
      auto [loss, grad] = kd_loss(s_logits, t_logits, labels, cfg.temperature, cfg.lambda);
      if (!std::isfinite(loss)) throw NumericFailure("non-finite distillation loss");
      student.backward(grad);
      nn::adam_step(params, grads, adam, cfg.adam);
      loss_sum += loss;
      ++batches;
    }
    EpochStats st;
    st.train_loss = loss_sum / static_cast<double>(batches);
    if (eval) st.eval_accuracy = evaluate_accuracy(student, *eval, cfg.batch_size);
    history.push_back(st);
  }
  return history;
}

models::Model quantize_model(const models::Model& model) {
  models::Model q = model;
  auto quantize_conv = [](models::ConvLayer& c) {
    c.qw = quantize_tensor(c.w);
    c.w.data.clear();
    c.x_cache = Tensor();
  };
  for (auto& cb : q.conv_blocks) {
    quantize_conv(cb.conv1);
    quantize_conv(cb.conv2);
  }
  for (auto& rb : q.res_blocks) {
    quantize_conv(rb.conv1);
    quantize_conv(rb.conv2);
  }
  if (q.config.pool == pooling::PoolKind::Statistic) {
    q.head_qw = quantize_tensor(q.head_w);
    q.head_w.data.clear();
  }
  q.cls_qw = quantize_tensor(q.cls_w);
  q.cls_w.data.clear();
  q.quantized = true;
  return q;
}

std::vector<ReportRow> compression_report(
    std::vector<std::pair<std::string, models::Model*>> models, const FeatureSet& eval) {
  if (models.empty()) throw EmptyList("compression report needs at least one model");
  std::vector<ReportRow> rows;
  int64_t ref_bytes = 0;
  for (auto& [name, model] : models) {
    ReportRow row;
    row.name = name;
    row.accuracy = evaluate_accuracy(*model, eval);
    row.bytes = static_cast<int64_t>(models::serialize_model(*model).size());
    if (ref_bytes == 0) ref_bytes = row.bytes;
    row.ratio = static_cast<double>(row.bytes) / static_cast<double>(ref_bytes);
    rows.push_back(row);
  }
  return rows;
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path);
  out << "name,accuracy,bytes,ratio\n";
  for (const auto& r : rows)
    out << r.name << ',' << r.accuracy << ',' << r.bytes << ',' << r.ratio << '\n';
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace compress
}  // namespace icn
