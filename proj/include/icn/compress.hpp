// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "icn/model.hpp"
#include "icn/quant.hpp"

namespace icn {
namespace compress {

// In-memory dataset of log-mel features (each frames x n_mels) with labels.
struct FeatureSet {
  std::vector<Tensor> features;
  std::vector<int> labels;

  size_t size() const { return features.size(); }
};

// Stack the selected items into a model input batch N x 1 x frames x n_mels.
Tensor stack_features(const FeatureSet& set, const std::vector<size_t>& indices);

double evaluate_accuracy(models::Model& model, const FeatureSet& eval, int batch_size = 32);
std::vector<int> predict(models::Model& model, const FeatureSet& set, int batch_size = 32);

// Distillation loss: (1-lambda) * CE(student, labels)
//                  + lambda * T^2 * KL(teacher_softened || student_softened).
// Returns the loss and its gradient w.r.t. the student logits; the teacher
// side receives no gradient.
std::pair<double, Tensor> kd_loss(const Tensor& student_logits,
                                  const Tensor& teacher_logits,
                                  const std::vector<int>& labels, double temperature,
                                  double lambda);

struct DistillConfig {
  double temperature = 2.0;
  double lambda = 0.5;
  nn::AdamConfig adam;
  int batch_size = 32;
  uint64_t seed = 0;
};

struct EpochStats {
  double train_loss = 0.0;
  double eval_accuracy = 0.0;
};

// Adam on kd_loss; teacher runs in eval mode and is never written to.
std::vector<EpochStats> distill(models::Model& teacher, models::Model& student,
                                const FeatureSet& train, const FeatureSet* eval,
                                int epochs, const DistillConfig& cfg);

// Per-tensor symmetric int8 on every conv3x3 and linear weight; biases and
// batch-norm parameters stay float.
models::Model quantize_model(const models::Model& model);

struct ReportRow {
  std::string name;
  double accuracy = 0.0;
  int64_t bytes = 0;
  double ratio = 1.0;  // bytes / bytes of the first row
};

std::vector<ReportRow> compression_report(
    std::vector<std::pair<std::string, models::Model*>> models, const FeatureSet& eval);
void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);

}  // namespace compress
}  // namespace icn
