// SPDX-License-Identifier: Apache-2.0
#include "icn/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "icn/error.hpp"
#include "json.hpp"

namespace icn {
namespace train {

namespace fs = std::filesystem;
using nlohmann::json;

uint64_t fnv1a(const void* data, size_t len, uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

json config_to_json(const RunConfig& c) {
  // std::map keys keep the output canonical (sorted)
  json j;
  j["arch"] = c.arch;
  j["attn_heads"] = c.attn_heads;
  j["batch_size"] = c.batch_size;
  j["clip_seconds"] = c.clip_seconds;
  j["epochs"] = c.epochs;
  j["lambda"] = c.lambda;
  j["lr"] = c.lr;
  j["manifest"] = c.manifest;
  j["n_mels"] = c.n_mels;
  j["out_dir"] = c.out_dir;
  j["pool"] = c.pool;
  j["pretrained_checkpoint"] = c.pretrained_checkpoint;
  j["seed"] = c.seed;
  j["task"] = c.task;
  j["temperature"] = c.temperature;
  j["width_den"] = c.width_den;
  j["width_num"] = c.width_num;
  return j;
}

}  // namespace

std::string RunConfig::to_json_text() const { return config_to_json(*this).dump(2) + "\n"; }

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  RunConfig c;
  try {
    if (j.contains("arch")) c.arch = j["arch"].get<std::string>();
    if (j.contains("attn_heads")) c.attn_heads = j["attn_heads"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("clip_seconds")) c.clip_seconds = j["clip_seconds"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("manifest")) c.manifest = j["manifest"].get<std::string>();
    if (j.contains("n_mels")) c.n_mels = j["n_mels"].get<int>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("pool")) c.pool = j["pool"].get<std::string>();
    if (j.contains("pretrained_checkpoint"))
      c.pretrained_checkpoint = j["pretrained_checkpoint"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("task")) c.task = j["task"].get<std::string>();
    if (j.contains("temperature")) c.temperature = j["temperature"].get<double>();
    if (j.contains("width_den")) c.width_den = j["width_den"].get<int64_t>();
    if (j.contains("width_num")) c.width_num = j["width_num"].get<int64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field: ") + e.what());
  }
  return c;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  auto as_int = [&value, &key]() {
    try {
      return std::stoll(value);
    } catch (...) {
      throw ConfigError("bad integer for " + key + ": " + value);
    }
  };
  auto as_double = [&value, &key]() {
    try {
      return std::stod(value);
    } catch (...) {
      throw ConfigError("bad number for " + key + ": " + value);
    }
  };
  if (key == "arch") arch = value;
  else if (key == "attn_heads") attn_heads = static_cast<int>(as_int());
  else if (key == "batch_size") batch_size = static_cast<int>(as_int());
  else if (key == "clip_seconds") clip_seconds = as_double();
  else if (key == "epochs") epochs = static_cast<int>(as_int());
  else if (key == "lambda") lambda = as_double();
  else if (key == "lr") lr = as_double();
  else if (key == "manifest") manifest = value;
  else if (key == "n_mels") n_mels = static_cast<int>(as_int());
  else if (key == "out_dir") out_dir = value;
  else if (key == "pool") pool = value;
  else if (key == "pretrained_checkpoint") pretrained_checkpoint = value;
  else if (key == "seed") seed = static_cast<uint64_t>(as_int());
  else if (key == "task") task = value;
  else if (key == "temperature") temperature = as_double();
  else if (key == "width_den") width_den = as_int();
  else if (key == "width_num") width_num = as_int();
  else throw ConfigError("unknown config key: " + key);
}

models::ModelConfig RunConfig::model_config(int n_classes) const {
  models::ModelConfig mc;
  mc.arch = models::arch_from_name(arch);
  mc.width_mult = {width_num, width_den};
  mc.n_mels = n_mels;
  mc.n_classes = n_classes;
  mc.pool = pooling::pool_kind_from_name(pool);
  mc.attn_heads = attn_heads;
  return mc;
}

std::string Metrics::to_json_text() const {
  json j;
  j["accuracy"] = accuracy;
  j["confusion_matrix"] = confusion;
  j["data_order_hash"] = data_order_hash;
  j["init_hash"] = init_hash;
  j["loss_curve"] = loss_curve;
  j["per_class_accuracy"] = per_class_accuracy;
  return j.dump(2) + "\n";
}

StftConfig default_stft() { return StftConfig{512, 160, 512}; }

MelFilterbank default_filterbank(int n_mels) {
  return build_mel_filterbank(n_mels, default_stft(), 50.0, 8000.0);
}

Tensor featurize_clip(const AudioClip& clip, const RunConfig& cfg) {
  const int64_t target = static_cast<int64_t>(std::llround(cfg.clip_seconds * kPipelineSampleRate));
  const AudioClip fixed = pad_or_truncate(clip, target);
  static thread_local int cached_mels = -1;
  static thread_local MelFilterbank fb;
  if (cached_mels != cfg.n_mels) {
    fb = default_filterbank(cfg.n_mels);
    cached_mels = cfg.n_mels;
  }
  return log_mel(fixed, default_stft(), fb);
}

namespace {

std::map<std::string, bool> read_split(const std::string& split_path) {
  std::map<std::string, bool> out;
  std::ifstream in(split_path);
  if (!in) return out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      continue;
    }
    auto comma = line.rfind(',');
    if (comma == std::string::npos) continue;
    out[line.substr(0, comma)] = line.substr(comma + 1) == "train";
  }
  return out;
}

compress::FeatureSet load_features_impl(const std::string& manifest_path,
                                        const RunConfig& cfg, int mode /*0 train,1 test,2 all*/) {
  const auto entries = read_manifest(manifest_path);
  const auto& labels = synth::task_labels(synth::task_from_name(cfg.task));
  const fs::path base = fs::path(manifest_path).parent_path();
  std::map<std::string, bool> split;
  if (mode != 2) split = read_split((base / "split.csv").string());

  compress::FeatureSet set;
  for (const auto& e : entries) {
    if (mode != 2 && !split.empty()) {
      auto it = split.find(e.path);
      const bool is_train = (it == split.end()) ? true : it->second;
      if ((mode == 0) != is_train) continue;
    }
    auto lit = std::find(labels.begin(), labels.end(), e.label);
    if (lit == labels.end())
      throw LabelSetMismatch("label `" + e.label + "` not in the " + cfg.task + " label set");
    const AudioClip clip = load_wav((base / e.path).string());
    set.features.push_back(featurize_clip(clip, cfg));
    set.labels.push_back(static_cast<int>(lit - labels.begin()));
  }
  if (set.size() == 0) throw EmptyDataset("no clips selected from " + manifest_path);
  return set;
}

uint64_t trunk_init_hash(models::Model& m) {
  uint64_t h = 1469598103934665603ULL;
  for (auto& p : m.params()) {
    if (p.name.rfind("head.", 0) == 0 || p.name.rfind("cls.", 0) == 0) continue;
    h = fnv1a(p.value->data.data(), p.value->data.size() * sizeof(float), h);
  }
  return h;
}

void warm_start(models::Model& model, const RunConfig& cfg) {
  models::Model ckpt = models::load_model(cfg.pretrained_checkpoint);
  if (ckpt.config.arch != model.config.arch ||
      ckpt.config.width_mult.num != model.config.width_mult.num ||
      ckpt.config.width_mult.den != model.config.width_mult.den ||
      ckpt.config.n_mels != model.config.n_mels)
    throw CheckpointMismatch("checkpoint arch/width/mels do not match the run config");
  if (ckpt.quantized) throw CheckpointMismatch("cannot warm-start from a quantized model");

  std::vector<models::ParamRef> sp, ss, dp, ds;
  ckpt.collect_named(sp, ss);
  model.collect_named(dp, ds);
  std::map<std::string, Tensor*> src;
  for (auto& p : sp) src[p.name] = p.value;
  for (auto& s : ss) src[s.name] = s.value;
  auto copy_trunk = [&src](std::vector<models::ParamRef>& dst) {
    for (auto& d : dst) {
      if (d.name.rfind("head.", 0) == 0 || d.name.rfind("cls.", 0) == 0) continue;
      auto it = src.find(d.name);
      if (it == src.end() || it->second->shape != d.value->shape)
        throw CheckpointMismatch("checkpoint tensor missing or mismatched: " + d.name);
      d.value->data = it->second->data;
    }
  };
  copy_trunk(dp);
  copy_trunk(ds);
}

}  // namespace

compress::FeatureSet load_features(const std::string& manifest_path, const RunConfig& cfg,
                                   bool want_train) {
  return load_features_impl(manifest_path, cfg, want_train ? 0 : 1);
}

compress::FeatureSet load_all_features(const std::string& manifest_path,
                                       const RunConfig& cfg) {
  return load_features_impl(manifest_path, cfg, 2);
}

Metrics evaluate(models::Model& model, const compress::FeatureSet& eval, int batch_size) {
  const int k = model.config.n_classes;
  const std::vector<int> pred = compress::predict(model, eval, batch_size);
  Metrics m;
  m.confusion.assign(static_cast<size_t>(k), std::vector<int64_t>(static_cast<size_t>(k), 0));
  for (size_t i = 0; i < pred.size(); ++i) {
    const int y = eval.labels[i];
    if (y < 0 || y >= k) throw LabelSetMismatch("eval label out of model range");
    m.confusion[static_cast<size_t>(y)][static_cast<size_t>(pred[i])] += 1;
  }
  int64_t trace = 0, total = 0;
  m.per_class_accuracy.assign(static_cast<size_t>(k), 0.0);
  for (int c = 0; c < k; ++c) {
    int64_t row = 0;
    for (int j = 0; j < k; ++j) row += m.confusion[static_cast<size_t>(c)][static_cast<size_t>(j)];
    trace += m.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    total += row;
    m.per_class_accuracy[static_cast<size_t>(c)] =
        row > 0 ? static_cast<double>(m.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)]) /
                      static_cast<double>(row)
                : 0.0;
  }
  m.accuracy = total > 0 ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;
  return m;
}

TrainResult fit(const RunConfig& cfg, const compress::FeatureSet& train_set,
                const compress::FeatureSet& eval_set) {
  if (train_set.size() == 0) throw EmptyDataset("empty training set");
  const auto& labels = synth::task_labels(synth::task_from_name(cfg.task));
  models::Model model =
      models::build_model(cfg.model_config(static_cast<int>(labels.size())),
                          splitmix64(cfg.seed ^ 0x696e6974ULL));  // init sub-seed
  if (!cfg.pretrained_checkpoint.empty()) warm_start(model, cfg);
  const uint64_t init_hash = trunk_init_hash(model);

  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads, cparams;
  for (auto& p : model.params()) {
    params.push_back(p.value);
    grads.push_back(p.grad);
    cparams.push_back(p.value);
  }
  nn::AdamState adam;
  adam.init(cparams);
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;

  std::mt19937_64 shuffle_rng(splitmix64(cfg.seed ^ 0x73687566ULL));  // shuffle sub-seed
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> loss_curve;
  uint64_t order_hash = 1469598103934665603ULL;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    order_hash = fnv1a(order.data(), order.size() * sizeof(size_t), order_hash);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      std::vector<size_t> idx(
          order.begin() + static_cast<long>(start),
          order.begin() + static_cast<long>(
                              std::min(order.size(), start + static_cast<size_t>(cfg.batch_size))));
      Tensor batch = compress::stack_features(train_set, idx);
      std::vector<int> y;
      for (size_t i : idx) y.push_back(train_set.labels[i]);
      Tensor probs = model.forward_probs(batch, true);
      auto [loss, grad] = nn::cross_entropy(probs, y);
      if (!std::isfinite(loss)) throw NumericFailure("non-finite training loss");
      model.backward(grad);
      nn::adam_step(params, grads, adam, acfg);
      loss_sum += loss;
      ++batches;
    }
    loss_curve.push_back(loss_sum / static_cast<double>(batches));
  }

  TrainResult result{std::move(model), {}};
  result.metrics = evaluate(result.model, eval_set, cfg.batch_size);
  result.metrics.loss_curve = std::move(loss_curve);
  result.metrics.data_order_hash = order_hash;
  result.metrics.init_hash = init_hash;
  return result;
}

TrainResult run_train(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("train requires a manifest");
  const compress::FeatureSet train_set = load_features(cfg.manifest, cfg, true);
  const compress::FeatureSet eval_set = load_features(cfg.manifest, cfg, false);
  TrainResult result = fit(cfg, train_set, eval_set);

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  models::save_model(result.model, (fs::path(cfg.out_dir) / "model.icnm").string());
  std::ofstream mj((fs::path(cfg.out_dir) / "metrics.json").string(), std::ios::binary);
  mj << result.metrics.to_json_text();
  std::ofstream cj((fs::path(cfg.out_dir) / "config.json").string(), std::ios::binary);
  cj << cfg.to_json_text();
  if (!mj || !cj) throw IoError("cannot write run outputs to " + cfg.out_dir);
  return result;
}

}  // namespace train
}  // namespace icn
