// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icn/audio.hpp"

namespace icn {
namespace synth {

enum class SynthKind { Cry, AdultVoice, PinkNoise };

// flat, rising, falling, vibrato
enum class Contour { Flat, Rising, Falling, Vibrato };

struct SynthSpec {
  int class_id = 0;
  SynthKind kind = SynthKind::Cry;
  double f0_min_hz = 350.0;
  double f0_max_hz = 500.0;
  double burst_rate_hz = 1.0;
  int harmonic_count = 6;
  Contour contour = Contour::Flat;
  double harmonic_tilt = 0.5;  // amplitude of harmonic h scales as h^-tilt
  double noise_floor = 0.01;
  double peak = 0.8;
  double duration_s = 2.0;
  uint64_t seed = 0;

  void validate() const;
};

LabeledClip gen_clip(const SynthSpec& spec);

// Fixed per-class parameter tuples; the reason classes differ by
// (f0 range, contour, burst rate, harmonic count, tilt).
SynthSpec reason_class_spec(int class_id, double duration_s, uint64_t seed);
SynthSpec pretrain_class_spec(int class_id, double duration_s, uint64_t seed);

enum class Task { Detect, Classify, Pretrain };
Task task_from_name(const std::string& name);
const char* task_name(Task t);
const std::vector<std::string>& task_labels(Task t);

struct DatasetPaths {
  std::string manifest_csv;
  std::string split_csv;
};

// Balanced deterministic dataset: WAVs plus manifest.csv (`path,label`) and
// split.csv (`path,train|test`), split 10:1 per class.
DatasetPaths gen_dataset(Task task, int n_per_class, uint64_t seed,
                         const std::string& out_dir, double duration_s = 2.0);

std::vector<float> pink_noise(size_t n, uint64_t seed);

}  // namespace synth
}  // namespace icn
