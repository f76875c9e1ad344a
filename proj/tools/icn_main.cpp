// SPDX-License-Identifier: Apache-2.0
//
// icn: one binary for the whole pipeline.
//
//   icn <verb> [--config file.json] [--set key=value ...] [--seed N] [--out dir]
//
// Verbs: synth featurize train eval poolsweep distill quantize report infer plot
//
// Exit codes: 0 success, 1 configuration/validation error, 2 I/O or file
// format error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "icn/compress.hpp"
#include "icn/dsp.hpp"
#include "icn/error.hpp"
#include "icn/model.hpp"
#include "icn/synth.hpp"
#include "icn/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace icn;

namespace {

// Keys consumed by individual verbs rather than the run configuration.
const std::set<std::string> kExtraKeys = {"n_per_class", "model", "input", "teacher",
                                          "models"};

struct Invocation {
  std::string verb;
  train::RunConfig cfg;
  std::map<std::string, std::string> extras;
};

std::string slurp_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

fs::path ensure_out_dir(const train::RunConfig& cfg) {
  fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create output directory " + cfg.out_dir);
  return dir;
}

void write_resolved_config(const fs::path& dir, const train::RunConfig& cfg) {
  write_file(dir / "config.json", cfg.to_json_text());
}

const std::string& require_extra(const Invocation& inv, const std::string& key) {
  auto it = inv.extras.find(key);
  if (it == inv.extras.end())
    throw ConfigError(inv.verb + " requires --set " + key + "=...");
  return it->second;
}

int extra_int(const Invocation& inv, const std::string& key, int fallback) {
  auto it = inv.extras.find(key);
  if (it == inv.extras.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (...) {
    throw ConfigError("bad integer for " + key + ": " + it->second);
  }
}

const std::vector<std::string>& labels_for_classes(int n_classes) {
  switch (n_classes) {
    case 2: return detect_labels();
    case 6: return reason_labels();
    case 10: return pretrain_labels();
    default: throw ConfigError("no label set for " + std::to_string(n_classes) + " classes");
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// verbs
// ---------------------------------------------------------------------------

void cmd_synth(const Invocation& inv) {
  const fs::path dir = ensure_out_dir(inv.cfg);
  const int n = extra_int(inv, "n_per_class", 10);
  synth::gen_dataset(synth::task_from_name(inv.cfg.task), n, inv.cfg.seed,
                     inv.cfg.out_dir, inv.cfg.clip_seconds);
  write_resolved_config(dir, inv.cfg);
}

void cmd_train(const Invocation& inv) { train::run_train(inv.cfg); }

void cmd_eval(const Invocation& inv) {
  models::Model model = models::load_model(require_extra(inv, "model"));
  if (inv.cfg.manifest.empty()) throw ConfigError("eval requires a manifest");
  const compress::FeatureSet eval_set =
      train::load_features(inv.cfg.manifest, inv.cfg, false);
  const train::Metrics m = train::evaluate(model, eval_set, inv.cfg.batch_size);
  const fs::path dir = ensure_out_dir(inv.cfg);
  write_file(dir / "metrics.json", m.to_json_text());
  write_resolved_config(dir, inv.cfg);
}

void cmd_featurize(const Invocation& inv) {
  const AudioClip clip = load_wav(require_extra(inv, "input"));
  const Tensor feats = train::featurize_clip(clip, inv.cfg);
  std::ostringstream csv;
  for (int64_t t = 0; t < feats.dim(0); ++t) {
    for (int64_t m = 0; m < feats.dim(1); ++m) {
      if (m) csv << ',';
      csv << fmt(feats.at2(t, m));
    }
    csv << '\n';
  }
  const fs::path dir = ensure_out_dir(inv.cfg);
  write_file(dir / "features.csv", csv.str());
  write_resolved_config(dir, inv.cfg);
}

void cmd_infer(const Invocation& inv) {
  models::Model model = models::load_model(require_extra(inv, "model"));
  const AudioClip clip = load_wav(require_extra(inv, "input"));
  train::RunConfig fc = inv.cfg;
  fc.n_mels = model.config.n_mels;  // features must match the model
  compress::FeatureSet one;
  one.features.push_back(train::featurize_clip(clip, fc));
  one.labels.push_back(0);
  const Tensor batch = compress::stack_features(one, {0});
  const Tensor probs = model.forward_probs(batch, false);

  const auto& labels = labels_for_classes(model.config.n_classes);
  int best = 0;
  for (int64_t k = 1; k < probs.dim(1); ++k)
    if (probs.at2(0, k) > probs.at2(0, best)) best = static_cast<int>(k);

  nlohmann::json j;
  j["label"] = labels[static_cast<size_t>(best)];
  std::vector<double> p;
  for (int64_t k = 0; k < probs.dim(1); ++k) p.push_back(probs.at2(0, k));
  j["probabilities"] = p;
  std::cout << j.dump(2) << "\n";
}

void cmd_quantize(const Invocation& inv) {
  models::Model model = models::load_model(require_extra(inv, "model"));
  models::Model q = compress::quantize_model(model);
  const fs::path dir = ensure_out_dir(inv.cfg);
  models::save_model(q, (dir / "model.icnm").string());
  write_resolved_config(dir, inv.cfg);
}

void cmd_report(const Invocation& inv) {
  const std::string list = require_extra(inv, "models");
  std::vector<std::string> paths;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ';'))
    if (!item.empty()) paths.push_back(item);
  if (paths.empty()) throw ConfigError("models list is empty");

  std::vector<models::Model> loaded;
  loaded.reserve(paths.size());
  for (const auto& p : paths) loaded.push_back(models::load_model(p));
  std::vector<std::pair<std::string, models::Model*>> named;
  for (size_t i = 0; i < paths.size(); ++i)
    named.emplace_back(fs::path(paths[i]).filename().string() + "#" + std::to_string(i),
                       &loaded[i]);

  if (inv.cfg.manifest.empty()) throw ConfigError("report requires a manifest");
  const compress::FeatureSet eval_set =
      train::load_features(inv.cfg.manifest, inv.cfg, false);
  const auto rows = compress::compression_report(named, eval_set);
  const fs::path dir = ensure_out_dir(inv.cfg);
  compress::write_report_csv((dir / "report.csv").string(), rows);
  write_resolved_config(dir, inv.cfg);
}

void cmd_plot(const Invocation& inv) {
  const AudioClip clip = load_wav(require_extra(inv, "input"));
  const int64_t target =
      static_cast<int64_t>(std::llround(inv.cfg.clip_seconds * kPipelineSampleRate));
  const AudioClip fixed = pad_or_truncate(clip, target);
  const Tensor spec = train::featurize_clip(clip, inv.cfg);
  const fs::path dir = ensure_out_dir(inv.cfg);
  dump_views(fixed, spec, (dir / "view").string());
  write_resolved_config(dir, inv.cfg);
}

void cmd_poolsweep(const Invocation& inv) {
  if (inv.cfg.manifest.empty()) throw ConfigError("poolsweep requires a manifest");
  const compress::FeatureSet train_set =
      train::load_features(inv.cfg.manifest, inv.cfg, true);
  const compress::FeatureSet eval_set =
      train::load_features(inv.cfg.manifest, inv.cfg, false);

  std::ostringstream csv;
  csv << "pool,accuracy,data_order_hash,init_hash\n";
  for (const char* pool : {"max", "avg", "add", "statistic", "attention"}) {
    train::RunConfig cfg = inv.cfg;
    cfg.pool = pool;
    train::TrainResult r = train::fit(cfg, train_set, eval_set);
    csv << pool << ',' << fmt(r.metrics.accuracy) << ',' << r.metrics.data_order_hash
        << ',' << r.metrics.init_hash << '\n';
  }
  const fs::path dir = ensure_out_dir(inv.cfg);
  write_file(dir / "poolsweep.csv", csv.str());
  write_resolved_config(dir, inv.cfg);
}

void cmd_distill(const Invocation& inv) {
  models::Model teacher = models::load_model(require_extra(inv, "teacher"));
  if (inv.cfg.manifest.empty()) throw ConfigError("distill requires a manifest");
  const compress::FeatureSet train_set =
      train::load_features(inv.cfg.manifest, inv.cfg, true);
  const compress::FeatureSet eval_set =
      train::load_features(inv.cfg.manifest, inv.cfg, false);

  const auto& labels = synth::task_labels(synth::task_from_name(inv.cfg.task));
  models::Model student =
      models::build_model(inv.cfg.model_config(static_cast<int>(labels.size())),
                          inv.cfg.seed);
  compress::DistillConfig dc;
  dc.temperature = inv.cfg.temperature;
  dc.lambda = inv.cfg.lambda;
  dc.adam.lr = inv.cfg.lr;
  dc.batch_size = inv.cfg.batch_size;
  dc.seed = inv.cfg.seed;
  const auto stats = compress::distill(teacher, student, train_set, &eval_set,
                                       inv.cfg.epochs, dc);

  train::Metrics m = train::evaluate(student, eval_set, inv.cfg.batch_size);
  for (const auto& s : stats) m.loss_curve.push_back(s.train_loss);
  const fs::path dir = ensure_out_dir(inv.cfg);
  models::save_model(student, (dir / "model.icnm").string());
  write_file(dir / "metrics.json", m.to_json_text());
  write_resolved_config(dir, inv.cfg);
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

int run(const Invocation& inv) {
  if (inv.verb == "synth") cmd_synth(inv);
  else if (inv.verb == "featurize") cmd_featurize(inv);
  else if (inv.verb == "train") cmd_train(inv);
  else if (inv.verb == "eval") cmd_eval(inv);
  else if (inv.verb == "poolsweep") cmd_poolsweep(inv);
  else if (inv.verb == "distill") cmd_distill(inv);
  else if (inv.verb == "quantize") cmd_quantize(inv);
  else if (inv.verb == "report") cmd_report(inv);
  else if (inv.verb == "infer") cmd_infer(inv);
  else if (inv.verb == "plot") cmd_plot(inv);
  else throw ConfigError("unknown verb: " + inv.verb);
  return 0;
}

int exit_code_for(const Error& e) {
  static const std::set<std::string> io_kinds = {
      "IoError",        "CorruptHeader",    "UnsupportedFormat", "SampleRateMismatch",
      "BadMagic",       "VersionMismatch",  "ChecksumMismatch"};
  if (io_kinds.count(e.kind())) return 2;
  if (e.kind() == "NumericFailure") return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infant cry analysis pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  uint64_t seed = 0;
  std::string out_dir;

  const std::vector<std::string> verbs = {"synth", "featurize", "train",  "eval",  "poolsweep",
                                          "distill", "quantize", "report", "infer", "plot"};
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", sets, "key=value override (repeatable)");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--out", out_dir, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  Invocation inv;
  inv.verb = sub->get_name();

  try {
    if (sub->count("--config")) inv.cfg = train::RunConfig::from_json_text(slurp_file(config_path));
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
      const std::string key = kv.substr(0, eq);
      const std::string value = kv.substr(eq + 1);
      if (kExtraKeys.count(key)) inv.extras[key] = value;
      else inv.cfg.apply_override(key, value);
    }
    if (sub->count("--seed")) inv.cfg.seed = seed;
    if (sub->count("--out")) inv.cfg.out_dir = out_dir;
    return run(inv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
