// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <string>
#include <vector>

#include "icn/audio.hpp"
#include "icn/tensor.hpp"

namespace icn {

// Power floor applied before the log; silence maps to ln(kLogFloorEps).
constexpr double kLogFloorEps = 1e-10;

struct StftConfig {
  int window_len = 512;
  int hop_len = 160;
  int fft_len = 512;

  std::vector<float> hann() const;  // periodic Hann of window_len
  int n_bins() const { return fft_len / 2 + 1; }
  void validate() const;
};

struct MelFilterbank {
  int n_mels = 64;
  double fmin_hz = 50.0;
  double fmax_hz = 8000.0;
  // n_mels x (fft_len/2+1), row-major
  Tensor filters;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// In-place iterative radix-2 FFT; n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& x, bool inverse = false);

// Frames x bins power spectrogram. Tail samples short of a full window are dropped.
Tensor stft_power(const AudioClip& clip, const StftConfig& cfg);

MelFilterbank build_mel_filterbank(int n_mels, const StftConfig& cfg,
                                   double fmin_hz, double fmax_hz,
                                   int sample_rate_hz = kPipelineSampleRate);

// Natural-log mel energies, shape frames x n_mels.
Tensor log_mel(const AudioClip& clip, const StftConfig& cfg, const MelFilterbank& fb);

int64_t n_frames_for(int64_t clip_len, const StftConfig& cfg);

// Writes <prefix>.wave.csv (t_seconds,amplitude) and <prefix>.spec.pgm
// (P5 grayscale, low mel bins at the bottom, min-max normalized).
void dump_views(const AudioClip& clip, const Tensor& spec, const std::string& out_prefix);

}  // namespace icn
