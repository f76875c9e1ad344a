// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "icn/compress.hpp"
#include "icn/dsp.hpp"
#include "icn/model.hpp"
#include "icn/synth.hpp"

namespace icn {
namespace train {

struct RunConfig {
  std::string task = "detect";        // detect | classify | pretrain
  std::string arch = "CNN10";
  int64_t width_num = 1;
  int64_t width_den = 8;
  std::string pool = "avg";
  int attn_heads = 4;
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  uint64_t seed = 1;
  double clip_seconds = 2.0;
  int n_mels = 64;
  double temperature = 2.0;
  double lambda = 0.5;
  std::string pretrained_checkpoint;  // optional warm start
  std::string manifest;               // dataset manifest path
  std::string out_dir = ".";

  std::string to_json_text() const;
  static RunConfig from_json_text(const std::string& text);
  void apply_override(const std::string& key, const std::string& value);
  models::ModelConfig model_config(int n_classes) const;
};

struct Metrics {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<int64_t>> confusion;  // rows = true class
  std::vector<double> loss_curve;
  uint64_t data_order_hash = 0;
  uint64_t init_hash = 0;

  std::string to_json_text() const;
};

StftConfig default_stft();
MelFilterbank default_filterbank(int n_mels);

// Featurize one clip: pad/truncate to the configured length, then log-mel.
Tensor featurize_clip(const AudioClip& clip, const RunConfig& cfg);

// Load features for the manifest rows whose split matches `want_train`.
// The sibling split.csv next to the manifest is used; if missing, everything
// is loaded. Labels map through the task's fixed label set.
compress::FeatureSet load_features(const std::string& manifest_path, const RunConfig& cfg,
                                   bool want_train);
compress::FeatureSet load_all_features(const std::string& manifest_path,
                                       const RunConfig& cfg);

struct TrainResult {
  models::Model model;
  Metrics metrics;  // eval metrics plus the training loss curve
};

// Adam + cross-entropy on preloaded features; deterministic given cfg.seed.
TrainResult fit(const RunConfig& cfg, const compress::FeatureSet& train_set,
                const compress::FeatureSet& eval_set);

Metrics evaluate(models::Model& model, const compress::FeatureSet& eval, int batch_size = 32);

// Full `train` command: load data, fit, write model.icnm, metrics.json and
// the resolved config.json into cfg.out_dir.
TrainResult run_train(const RunConfig& cfg);

uint64_t fnv1a(const void* data, size_t len, uint64_t h = 1469598103934665603ULL);

}  // namespace train
}  // namespace icn
