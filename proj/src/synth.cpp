// SPDX-License-Identifier: Apache-2.0
#include "icn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "icn/error.hpp"

namespace icn {
namespace synth {

namespace {

constexpr double kPi = 3.14159265358979323846;

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

double contour_f0(const SynthSpec& s, double base, double t, double dur) {
  switch (s.contour) {
    case Contour::Flat: return base;
    case Contour::Rising: return base * (1.0 + 0.15 * t / dur);
    case Contour::Falling: return base * (1.0 - 0.15 * t / dur);
    case Contour::Vibrato: return base * (1.0 + 0.05 * std::sin(2.0 * kPi * 5.0 * t));
  }
  return base;
}

void scale_to_peak(std::vector<float>& x, double peak) {
  float mx = 0.0f;
  for (float v : x) mx = std::max(mx, std::fabs(v));
  if (mx == 0.0f) return;
  const float g = static_cast<float>(peak) / mx;
  for (float& v : x) v *= g;
}

}  // namespace

void SynthSpec::validate() const {
  if (duration_s <= 0.0) throw BadSpec("duration must be positive");
  if (kind == SynthKind::Cry || kind == SynthKind::AdultVoice) {
    if (!(f0_min_hz > 80.0 && f0_max_hz < 1000.0 && f0_min_hz <= f0_max_hz))
      throw BadSpec("f0 range must lie within (80, 1000) Hz");
    if (harmonic_count < 1) throw BadSpec("need at least one harmonic");
    if (burst_rate_hz <= 0.0) throw BadSpec("burst rate must be positive");
  }
  if (!(peak > 0.0 && peak <= 1.0)) throw BadSpec("peak must be in (0, 1]");
}

std::vector<float> pink_noise(size_t n, uint64_t seed) {
  // Voss-McCartney: one row per octave, row k redrawn every 2^k samples
  constexpr int kRows = 16;
  std::mt19937_64 rng(splitmix64(seed));
  double rows[kRows];
  for (double& r : rows) r = uniform(rng, -1.0, 1.0);
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) {
    for (int k = 0; k < kRows; ++k)
      if (i % (1ULL << k) == 0) rows[k] = uniform(rng, -1.0, 1.0);
    double sum = uniform(rng, -1.0, 1.0);  // white top octave
    for (int k = 0; k < kRows; ++k) sum += rows[k];
    out[i] = static_cast<float>(sum / (kRows + 1));
  }
  return out;
}

LabeledClip gen_clip(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(splitmix64(spec.seed));
  const int sr = kPipelineSampleRate;
  const size_t n = static_cast<size_t>(std::llround(spec.duration_s * sr));
  const double dur = spec.duration_s;
  std::vector<float> x(n, 0.0f);

  if (spec.kind == SynthKind::PinkNoise) {
    x = pink_noise(n, rng());
  } else if (spec.kind == SynthKind::Cry) {
    const double f0 = uniform(rng, spec.f0_min_hz, spec.f0_max_hz);
    std::vector<double> phase(static_cast<size_t>(spec.harmonic_count));
    for (double& p : phase) p = uniform(rng, 0.0, 2.0 * kPi);
    const double burst_phase = uniform(rng, 0.0, 1.0);
    for (size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / sr;
      const double f = contour_f0(spec, f0, t, dur);
      double s = 0.0;
      for (int h = 1; h <= spec.harmonic_count; ++h) {
        auto& p = phase[static_cast<size_t>(h - 1)];
        p += 2.0 * kPi * f * h / sr;
        s += std::pow(static_cast<double>(h), -spec.harmonic_tilt) * std::sin(p);
      }
      // periodic raised-cosine bursts at the burst rate
      const double env =
          std::pow(0.5 - 0.5 * std::cos(2.0 * kPi * (spec.burst_rate_hz * t + burst_phase)), 2.0);
      x[i] = static_cast<float>(s * env);
    }
    scale_to_peak(x, spec.peak);
    const std::vector<float> nz = pink_noise(n, rng());
    for (size_t i = 0; i < n; ++i) x[i] += static_cast<float>(spec.noise_floor) * nz[i];
  } else {  // AdultVoice: jittered f0, irregular low-amplitude envelope
    double f = uniform(rng, spec.f0_min_hz, spec.f0_max_hz);
    std::vector<double> phase(static_cast<size_t>(spec.harmonic_count));
    for (double& p : phase) p = uniform(rng, 0.0, 2.0 * kPi);
    // envelope as a sum of slow random sinusoids
    double ef[3], ep[3];
    for (int k = 0; k < 3; ++k) {
      ef[k] = uniform(rng, 0.3, 2.0);
      ep[k] = uniform(rng, 0.0, 2.0 * kPi);
    }
    for (size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / sr;
      // pitch jitter as a bounded random walk
      f += uniform(rng, -0.5, 0.5);
      f = std::clamp(f, spec.f0_min_hz, spec.f0_max_hz);
      double s = 0.0;
      for (int h = 1; h <= spec.harmonic_count; ++h) {
        auto& p = phase[static_cast<size_t>(h - 1)];
        p += 2.0 * kPi * f * h / sr;
        s += std::pow(static_cast<double>(h), -spec.harmonic_tilt) * std::sin(p);
      }
      double env = 0.0;
      for (int k = 0; k < 3; ++k) env += std::sin(2.0 * kPi * ef[k] * t + ep[k]);
      env = 0.25 + 0.25 * (env / 3.0 + 1.0);
      x[i] = static_cast<float>(s * env);
    }
    scale_to_peak(x, spec.peak);
    const std::vector<float> nz = pink_noise(n, rng());
    for (size_t i = 0; i < n; ++i) x[i] += static_cast<float>(spec.noise_floor) * nz[i];
  }

  for (float& v : x) v = std::clamp(v, -1.0f, 1.0f);
  LabeledClip lc;
  lc.clip.samples = std::move(x);
  lc.clip.sample_rate_hz = sr;
  lc.label = spec.class_id;
  return lc;
}

SynthSpec reason_class_spec(int class_id, double duration_s, uint64_t seed) {
  // awake, hug, sleepy, uncomfortable, diaper, hungry
  static const struct {
    double f0_lo, f0_hi;
    Contour contour;
    double burst;
    int harmonics;
    double tilt;
  } kTable[6] = {
      {355.0, 375.0, Contour::Flat, 0.90, 7, 0.3},
      {380.0, 400.0, Contour::Rising, 1.10, 6, 0.5},
      {405.0, 425.0, Contour::Falling, 1.30, 5, 0.7},
      {430.0, 450.0, Contour::Vibrato, 1.50, 4, 0.9},
      {455.0, 475.0, Contour::Flat, 0.80, 8, 1.1},
      {480.0, 500.0, Contour::Rising, 1.20, 5, 1.3},
  };
  if (class_id < 0 || class_id >= 6) throw BadSpec("reason class out of range");
  const auto& row = kTable[class_id];
  SynthSpec s;
  s.class_id = class_id;
  s.kind = SynthKind::Cry;
  s.f0_min_hz = row.f0_lo;
  s.f0_max_hz = row.f0_hi;
  s.contour = row.contour;
  s.burst_rate_hz = row.burst;
  s.harmonic_count = row.harmonics;
  s.harmonic_tilt = row.tilt;
  s.peak = 0.8;
  s.duration_s = duration_s;
  s.seed = seed;
  return s;
}

SynthSpec pretrain_class_spec(int class_id, double duration_s, uint64_t seed) {
  if (class_id < 0 || class_id >= 10) throw BadSpec("pretrain class out of range");
  // synthetic event classes parameterized outside the cry tuples
  SynthSpec s;
  s.class_id = class_id;
  s.kind = SynthKind::Cry;  // harmonic-stack family, disjoint parameters
  s.f0_min_hz = 540.0 + 42.0 * class_id;
  s.f0_max_hz = s.f0_min_hz + 20.0;
  s.contour = static_cast<Contour>(class_id % 4);
  s.burst_rate_hz = 1.7 + 0.25 * class_id;
  s.harmonic_count = 3 + class_id % 4;
  s.harmonic_tilt = 0.4 + 0.12 * class_id;
  s.peak = 0.75;
  s.duration_s = duration_s;
  s.seed = seed;
  return s;
}

Task task_from_name(const std::string& name) {
  if (name == "detect") return Task::Detect;
  if (name == "classify") return Task::Classify;
  if (name == "pretrain") return Task::Pretrain;
  throw ConfigError("unknown task: " + name);
}

const char* task_name(Task t) {
  switch (t) {
    case Task::Detect: return "detect";
    case Task::Classify: return "classify";
    case Task::Pretrain: return "pretrain";
  }
  return "?";
}

const std::vector<std::string>& task_labels(Task t) {
  switch (t) {
    case Task::Detect: return detect_labels();
    case Task::Classify: return reason_labels();
    case Task::Pretrain: return pretrain_labels();
  }
  return detect_labels();
}

DatasetPaths gen_dataset(Task task, int n_per_class, uint64_t seed,
                         const std::string& out_dir, double duration_s) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir);

  const auto& labels = task_labels(task);
  const int n_classes = static_cast<int>(labels.size());
  std::vector<ManifestEntry> manifest;
  std::vector<std::pair<std::string, bool>> split;  // path, is_train
  const int n_test = std::max(1, n_per_class / 11);

  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < n_per_class; ++i) {
      const uint64_t clip_index = static_cast<uint64_t>(c * n_per_class + i);
      const uint64_t clip_seed = seed ^ clip_index;
      SynthSpec spec;
      switch (task) {
        case Task::Detect:
          if (c == 1) {
            spec.kind = SynthKind::Cry;
            spec.f0_min_hz = 350.0;
            spec.f0_max_hz = 500.0;
            spec.burst_rate_hz = 0.8 + 0.1 * (i % 8);
            spec.harmonic_count = 4 + i % 5;
            spec.harmonic_tilt = 0.3 + 0.1 * (i % 7);
            spec.peak = 0.8;
          } else if (i % 2 == 0) {
            spec.kind = SynthKind::AdultVoice;
            spec.f0_min_hz = 120.0;
            spec.f0_max_hz = 200.0;
            spec.harmonic_count = 6;
            spec.harmonic_tilt = 0.8;
            spec.peak = 0.35;
          } else {
            spec.kind = SynthKind::PinkNoise;
            spec.peak = 0.3;
          }
          spec.class_id = c;
          spec.duration_s = duration_s;
          spec.seed = clip_seed;
          break;
        case Task::Classify:
          spec = reason_class_spec(c, duration_s, clip_seed);
          break;
        case Task::Pretrain:
          spec = pretrain_class_spec(c, duration_s, clip_seed);
          break;
      }
      const LabeledClip lc = gen_clip(spec);
      const std::string fname = std::string(task_name(task)) + "_" + labels[c] + "_" +
                                std::to_string(i) + ".wav";
      save_wav((fs::path(out_dir) / fname).string(), lc.clip);
      manifest.push_back({fname, labels[c]});
      split.emplace_back(fname, i < n_per_class - n_test);
    }
  }

  DatasetPaths paths;
  paths.manifest_csv = (fs::path(out_dir) / "manifest.csv").string();
  paths.split_csv = (fs::path(out_dir) / "split.csv").string();
  write_manifest(paths.manifest_csv, manifest);
  std::ofstream sp(paths.split_csv);
  if (!sp) throw IoError("cannot write " + paths.split_csv);
  sp << "path,split\n";
  for (const auto& [p, is_train] : split) sp << p << ',' << (is_train ? "train" : "test") << '\n';
  if (!sp) throw IoError("write failed for " + paths.split_csv);
  return paths;
}

}  // namespace synth
}  // namespace icn
