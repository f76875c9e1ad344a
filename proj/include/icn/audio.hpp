// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace icn {

constexpr int kPipelineSampleRate = 16000;

// Mono PCM clip, samples normalized to [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = kPipelineSampleRate;
};

struct LabeledClip {
  AudioClip clip;
  int label = 0;
};

// Fixed label sets. The reason order follows the six-way task definition.
const std::vector<std::string>& detect_labels();   // {no-cry, cry}
const std::vector<std::string>& reason_labels();   // {awake, hug, sleepy, uncomfortable, diaper, hungry}
const std::vector<std::string>& pretrain_labels(); // {event0..event9}

// PCM16 mono WAV reader. strict==true rejects non-16k sample rates.
AudioClip load_wav(const std::string& path, bool strict = true);
void save_wav(const std::string& path, const AudioClip& clip);

AudioClip pad_or_truncate(const AudioClip& clip, int64_t target_len);
AudioClip peak_normalize(const AudioClip& clip);

// Dataset manifest: CSV `path,label` with a header row.
struct ManifestEntry {
  std::string path;
  std::string label;
};
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

}  // namespace icn
