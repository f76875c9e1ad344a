// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "icn/error.hpp"
#include "icn/synth.hpp"
#include "icn/train.hpp"

using namespace icn;
using namespace icn::train;
namespace fs = std::filesystem;

namespace {

fs::path base_dir() {
  static fs::path d = [] {
    fs::path p = fs::temp_directory_path() / "icn_test_train";
    fs::create_directories(p);
    return p;
  }();
  return d;
}

// one small shared detect dataset for the whole file
const std::string& detect_manifest() {
  static std::string path = [] {
    fs::path dir = base_dir() / "detect_data";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto p = synth::gen_dataset(synth::Task::Detect, 11, 5, dir.string(), 0.5);
    return p.manifest_csv;
  }();
  return path;
}

RunConfig tiny_cfg() {
  RunConfig cfg;
  cfg.task = "detect";
  cfg.arch = "CNN10";
  cfg.width_num = 1;
  cfg.width_den = 16;
  cfg.n_mels = 16;
  cfg.clip_seconds = 0.5;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.manifest = detect_manifest();
  return cfg;
}

}  // namespace

TEST_CASE("run config JSON round trip and overrides") {
  RunConfig cfg = tiny_cfg();
  cfg.pool = "statistic";
  cfg.seed = 42;
  std::string text = cfg.to_json_text();
  RunConfig back = RunConfig::from_json_text(text);
  CHECK(back.pool == "statistic");
  CHECK(back.seed == 42);
  CHECK(back.width_den == 16);
  CHECK(back.clip_seconds == doctest::Approx(0.5));
  CHECK(back.to_json_text() == text);

  back.apply_override("epochs", "7");
  CHECK(back.epochs == 7);
  back.apply_override("pool", "attention");
  CHECK(back.pool == "attention");
  back.apply_override("lr", "0.01");
  CHECK(back.lr == doctest::Approx(0.01));
  CHECK_THROWS_AS(back.apply_override("no_such_key", "1"), ConfigError);
}

TEST_CASE("featurize_clip shape follows the config") {
  RunConfig cfg = tiny_cfg();
  AudioClip clip;
  clip.samples.assign(1000, 0.1f);  // shorter than 0.5 s; gets padded
  Tensor f = featurize_clip(clip, cfg);
  StftConfig stft = default_stft();
  CHECK(f.dim(0) == n_frames_for(8000, stft));
  CHECK(f.dim(1) == 16);
}

TEST_CASE("load_features splits train and test") {
  RunConfig cfg = tiny_cfg();
  auto train_set = load_features(cfg.manifest, cfg, true);
  auto test_set = load_features(cfg.manifest, cfg, false);
  CHECK(train_set.size() == 20);
  CHECK(test_set.size() == 2);
  auto all = load_all_features(cfg.manifest, cfg);
  CHECK(all.size() == 22);
  // labels map through the detect label set {no-cry=0, cry=1}
  for (int l : all.labels) CHECK((l == 0 || l == 1));
  CHECK(std::count(all.labels.begin(), all.labels.end(), 1) == 11);
}

TEST_CASE("fit with zero epochs still evaluates") {
  RunConfig cfg = tiny_cfg();
  cfg.epochs = 0;
  auto train_set = load_features(cfg.manifest, cfg, true);
  auto test_set = load_features(cfg.manifest, cfg, false);
  TrainResult r = fit(cfg, train_set, test_set);
  CHECK(r.metrics.loss_curve.empty());
  CHECK(r.metrics.accuracy >= 0.0);
  CHECK(r.metrics.accuracy <= 1.0);
  CHECK(r.metrics.confusion.size() == 2);
}

TEST_CASE("training is deterministic and learns the separable detect set") {
  RunConfig cfg = tiny_cfg();
  cfg.epochs = 3;
  auto train_set = load_features(cfg.manifest, cfg, true);
  auto test_set = load_features(cfg.manifest, cfg, false);
  TrainResult a = fit(cfg, train_set, test_set);
  TrainResult b = fit(cfg, train_set, test_set);
  CHECK(a.metrics.to_json_text() == b.metrics.to_json_text());
  CHECK(a.metrics.data_order_hash == b.metrics.data_order_hash);
  CHECK(a.metrics.init_hash == b.metrics.init_hash);
  CHECK(a.metrics.loss_curve.size() == 3);
  CHECK(a.metrics.accuracy >= 0.5);

  // different seed shuffles differently
  RunConfig cfg2 = cfg;
  cfg2.seed = 99;
  TrainResult c = fit(cfg2, train_set, test_set);
  CHECK(c.metrics.init_hash != a.metrics.init_hash);
}

TEST_CASE("evaluate is order invariant and deterministic") {
  RunConfig cfg = tiny_cfg();
  cfg.epochs = 2;
  auto train_set = load_features(cfg.manifest, cfg, true);
  auto test_set = load_features(cfg.manifest, cfg, false);
  TrainResult r = fit(cfg, train_set, test_set);

  Metrics m1 = evaluate(r.model, test_set);
  Metrics m2 = evaluate(r.model, test_set);
  CHECK(m1.to_json_text() == m2.to_json_text());

  // confusion rows sum to per-class counts; accuracy = trace/total
  int64_t total = 0, trace = 0;
  for (size_t i = 0; i < m1.confusion.size(); ++i)
    for (size_t j = 0; j < m1.confusion[i].size(); ++j) {
      total += m1.confusion[i][j];
      if (i == j) trace += m1.confusion[i][j];
    }
  CHECK(total == static_cast<int64_t>(test_set.size()));
  CHECK(m1.accuracy == doctest::Approx(static_cast<double>(trace) / total));

  // shuffled eval order leaves accuracy unchanged
  compress::FeatureSet shuffled;
  std::vector<size_t> idx(test_set.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(17);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (size_t i : idx) {
    shuffled.features.push_back(test_set.features[i]);
    shuffled.labels.push_back(test_set.labels[i]);
  }
  Metrics m3 = evaluate(r.model, shuffled);
  CHECK(m3.accuracy == doctest::Approx(m1.accuracy));
}

TEST_CASE("run_train writes model, metrics and resolved config") {
  RunConfig cfg = tiny_cfg();
  cfg.epochs = 1;
  fs::path out = base_dir() / "run1";
  fs::remove_all(out);
  fs::create_directories(out);
  cfg.out_dir = out.string();
  TrainResult r = run_train(cfg);
  CHECK(fs::exists(out / "model.icnm"));
  CHECK(fs::exists(out / "metrics.json"));
  CHECK(fs::exists(out / "config.json"));

  // re-running from the resolved config reproduces the metrics bytes
  std::ifstream cfg_in(out / "config.json");
  std::string cfg_text((std::istreambuf_iterator<char>(cfg_in)), {});
  RunConfig again = RunConfig::from_json_text(cfg_text);
  fs::path out2 = base_dir() / "run2";
  fs::remove_all(out2);
  fs::create_directories(out2);
  again.out_dir = out2.string();
  run_train(again);
  std::ifstream m1(out / "metrics.json"), m2(out2 / "metrics.json");
  std::string s1((std::istreambuf_iterator<char>(m1)), {});
  std::string s2((std::istreambuf_iterator<char>(m2)), {});
  CHECK(s1 == s2);
}

TEST_CASE("warm start loads trunk weights and checks compatibility") {
  // pretrain on the 10-class task, then warm-start detect
  fs::path pre_dir = base_dir() / "pretrain_data";
  fs::remove_all(pre_dir);
  fs::create_directories(pre_dir);
  auto pre_paths = synth::gen_dataset(synth::Task::Pretrain, 3, 2, pre_dir.string(), 0.5);

  RunConfig pre_cfg = tiny_cfg();
  pre_cfg.task = "pretrain";
  pre_cfg.manifest = pre_paths.manifest_csv;
  pre_cfg.epochs = 1;
  fs::path pre_out = base_dir() / "pretrain_run";
  fs::remove_all(pre_out);
  fs::create_directories(pre_out);
  pre_cfg.out_dir = pre_out.string();
  run_train(pre_cfg);
  const std::string ckpt = (pre_out / "model.icnm").string();

  RunConfig warm = tiny_cfg();
  warm.epochs = 1;
  warm.pretrained_checkpoint = ckpt;
  auto train_set = load_features(warm.manifest, warm, true);
  auto test_set = load_features(warm.manifest, warm, false);
  TrainResult cold = fit(tiny_cfg(), train_set, test_set);
  TrainResult wr = fit(warm, train_set, test_set);
  // warm start changes the initialization relative to cold
  CHECK(wr.metrics.init_hash != cold.metrics.init_hash);

  // incompatible checkpoints are rejected
  RunConfig bad = warm;
  bad.arch = "CNN14";
  CHECK_THROWS_AS(fit(bad, train_set, test_set), CheckpointMismatch);
  RunConfig bad2 = warm;
  bad2.width_den = 8;
  CHECK_THROWS_AS(fit(bad2, train_set, test_set), CheckpointMismatch);
}

TEST_CASE("label set mismatch is detected") {
  // classify-task config pointed at a detect manifest
  RunConfig cfg = tiny_cfg();
  cfg.task = "classify";
  CHECK_THROWS_AS(load_all_features(cfg.manifest, cfg), LabelSetMismatch);
}
