// SPDX-License-Identifier: Apache-2.0
#include "icn/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "icn/error.hpp"

namespace icn {

namespace {
constexpr double kPi = 3.14159265358979323846;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }
}  // namespace

std::vector<float> StftConfig::hann() const {
  std::vector<float> w(static_cast<size_t>(window_len));
  for (int i = 0; i < window_len; ++i)
    w[static_cast<size_t>(i)] =
        static_cast<float>(0.5 - 0.5 * std::cos(2.0 * kPi * i / window_len));
  return w;
}

void StftConfig::validate() const {
  if (!(hop_len > 0 && hop_len <= window_len && window_len <= fft_len))
    throw ConfigError("require 0 < hop_len <= window_len <= fft_len");
  if (!is_pow2(fft_len)) throw ConfigError("fft_len must be a power of two");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void fft_radix2(std::vector<std::complex<double>>& x, bool inverse) {
  const size_t n = x.size();
  if (!is_pow2(static_cast<int>(n))) throw ConfigError("FFT size must be a power of two");
  // bit reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = x[i + k];
        std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& v : x) v /= static_cast<double>(n);
}

int64_t n_frames_for(int64_t clip_len, const StftConfig& cfg) {
  if (clip_len < cfg.window_len) return 0;
  return 1 + (clip_len - cfg.window_len) / cfg.hop_len;
}

Tensor stft_power(const AudioClip& clip, const StftConfig& cfg) {
  cfg.validate();
  const int64_t len = static_cast<int64_t>(clip.samples.size());
  const int64_t frames = n_frames_for(len, cfg);
  if (frames == 0)
    throw ClipTooShort("clip of " + std::to_string(len) + " samples < window " +
                       std::to_string(cfg.window_len));
  const int bins = cfg.n_bins();
  const std::vector<float> win = cfg.hann();
  Tensor out({frames, bins});
  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_len));
  for (int64_t t = 0; t < frames; ++t) {
    const float* src = clip.samples.data() + t * cfg.hop_len;
    for (int i = 0; i < cfg.window_len; ++i)
      buf[static_cast<size_t>(i)] = {static_cast<double>(src[i]) * win[static_cast<size_t>(i)], 0.0};
    for (int i = cfg.window_len; i < cfg.fft_len; ++i) buf[static_cast<size_t>(i)] = {0.0, 0.0};
    fft_radix2(buf);
    for (int k = 0; k < bins; ++k)
      out.at2(t, k) = static_cast<float>(std::norm(buf[static_cast<size_t>(k)]));
  }
  return out;
}

MelFilterbank build_mel_filterbank(int n_mels, const StftConfig& cfg, double fmin_hz,
                                   double fmax_hz, int sample_rate_hz) {
  cfg.validate();
  if (!(0.0 <= fmin_hz && fmin_hz < fmax_hz && fmax_hz <= sample_rate_hz / 2.0))
    throw BadFrequencyRange("need 0 <= fmin < fmax <= nyquist");
  if (n_mels < 2) throw BadFrequencyRange("n_mels must be >= 2");

  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.fmin_hz = fmin_hz;
  fb.fmax_hz = fmax_hz;
  const int bins = cfg.n_bins();
  fb.filters = Tensor({n_mels, bins});

  // n_mels + 2 edge points equally spaced on the mel scale
  const double mel_lo = hz_to_mel(fmin_hz);
  const double mel_hi = hz_to_mel(fmax_hz);
  std::vector<double> hz_pts(static_cast<size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    hz_pts[static_cast<size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  for (int m = 0; m < n_mels; ++m) {
    const double lo = hz_pts[static_cast<size_t>(m)];
    const double center = hz_pts[static_cast<size_t>(m) + 1];
    const double hi = hz_pts[static_cast<size_t>(m) + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / cfg.fft_len;
      double w = 0.0;
      if (f > lo && f < hi)
        w = (f <= center) ? (f - lo) / (center - lo) : (hi - f) / (hi - center);
      fb.filters.at2(m, k) = static_cast<float>(w);
    }
    // guarantee a positive row sum even for very narrow filters at low fft resolution
    double row = 0.0;
    for (int k = 0; k < bins; ++k) row += fb.filters.at2(m, k);
    if (row == 0.0) {
      int k_center = static_cast<int>(std::lrint(center * cfg.fft_len / sample_rate_hz));
      k_center = std::clamp(k_center, 0, bins - 1);
      fb.filters.at2(m, k_center) = 1.0f;
    }
  }
  return fb;
}

Tensor log_mel(const AudioClip& clip, const StftConfig& cfg, const MelFilterbank& fb) {
  Tensor power = stft_power(clip, cfg);
  const int64_t frames = power.dim(0);
  const int bins = static_cast<int>(power.dim(1));
  Tensor out({frames, fb.n_mels});
  for (int64_t t = 0; t < frames; ++t) {
    for (int m = 0; m < fb.n_mels; ++m) {
      double acc = 0.0;
      for (int k = 0; k < bins; ++k)
        acc += static_cast<double>(fb.filters.at2(m, k)) * power.at2(t, k);
      out.at2(t, m) = static_cast<float>(std::log(std::max(acc, kLogFloorEps)));
    }
  }
  return out;
}

void dump_views(const AudioClip& clip, const Tensor& spec, const std::string& out_prefix) {
  {
    std::ofstream wave(out_prefix + ".wave.csv");
    if (!wave) throw IoError("cannot write " + out_prefix + ".wave.csv");
    wave << "t_seconds,amplitude\n";
    for (size_t i = 0; i < clip.samples.size(); ++i)
      wave << static_cast<double>(i) / clip.sample_rate_hz << ',' << clip.samples[i] << '\n';
    if (!wave) throw IoError("write failed for " + out_prefix + ".wave.csv");
  }
  const int64_t frames = spec.dim(0);
  const int64_t mels = spec.dim(1);
  float lo = spec.data[0], hi = spec.data[0];
  for (float v : spec.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = (hi > lo) ? (hi - lo) : 1.0f;
  std::ofstream img(out_prefix + ".spec.pgm", std::ios::binary);
  if (!img) throw IoError("cannot write " + out_prefix + ".spec.pgm");
  img << "P5\n" << frames << ' ' << mels << "\n255\n";
  // image row 0 is the highest mel bin so low frequencies sit at the bottom
  for (int64_t m = mels - 1; m >= 0; --m) {
    for (int64_t t = 0; t < frames; ++t) {
      float v = (spec.at2(t, m) - lo) / range;
      unsigned char px = static_cast<unsigned char>(std::lrint(v * 255.0f));
      img.write(reinterpret_cast<char*>(&px), 1);
    }
  }
  if (!img) throw IoError("write failed for " + out_prefix + ".spec.pgm");
}

}  // namespace icn
