// SPDX-License-Identifier: Apache-2.0
#include "icn/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "icn/error.hpp"

namespace icn {

const std::vector<std::string>& detect_labels() {
  static const std::vector<std::string> v = {"no-cry", "cry"};
  return v;
}

const std::vector<std::string>& reason_labels() {
  static const std::vector<std::string> v = {"awake", "hug", "sleepy",
                                             "uncomfortable", "diaper", "hungry"};
  return v;
}

const std::vector<std::string>& pretrain_labels() {
  static const std::vector<std::string> v = {
      "event0", "event1", "event2", "event3", "event4",
      "event5", "event6", "event7", "event8", "event9"};
  return v;
}

namespace {

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& out, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

AudioClip load_wav(const std::string& path, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0)
    throw CorruptHeader("missing RIFF tag in " + path);
  read_u32(in);  // riff size
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0)
    throw CorruptHeader("missing WAVE tag in " + path);

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  AudioClip clip;

  while (in.read(tag, 4)) {
    uint32_t chunk_size = read_u32(in);
    if (!in) throw CorruptHeader("truncated chunk header in " + path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw CorruptHeader("fmt chunk too small");
      format = read_u16(in);
      channels = read_u16(in);
      rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      in.ignore(chunk_size - 16 + (chunk_size & 1));
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw CorruptHeader("data chunk before fmt");
      if (format != 1 || bits != 16 || channels != 1)
        throw UnsupportedFormat("require PCM16 mono, got format=" +
                                std::to_string(format) + " bits=" + std::to_string(bits) +
                                " channels=" + std::to_string(channels));
      size_t n = chunk_size / 2;
      clip.samples.resize(n);
      std::vector<char> raw(chunk_size);
      in.read(raw.data(), chunk_size);
      if (!in) throw CorruptHeader("truncated data chunk in " + path);
      for (size_t i = 0; i < n; ++i) {
        int16_t s = static_cast<int16_t>(
            static_cast<unsigned char>(raw[2 * i]) |
            (static_cast<unsigned char>(raw[2 * i + 1]) << 8));
        clip.samples[i] = static_cast<float>(s) / 32768.0f;
      }
      clip.sample_rate_hz = static_cast<int>(rate);
      if (strict && clip.sample_rate_hz != kPipelineSampleRate)
        throw SampleRateMismatch("expected 16000 Hz, got " + std::to_string(rate));
      return clip;
    } else {
      in.ignore(chunk_size + (chunk_size & 1));
    }
  }
  throw CorruptHeader("no data chunk in " + path);
}

void save_wav(const std::string& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<uint32_t>(clip.sample_rate_hz));
  write_u32(out, static_cast<uint32_t>(clip.sample_rate_hz * 2));
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (float s : clip.samples) {
    float clamped = std::clamp(s, -1.0f, 1.0f);
    int v = static_cast<int>(std::lrint(clamped * 32768.0f));
    int16_t q = static_cast<int16_t>(std::clamp(v, -32768, 32767));
    unsigned char b[2] = {static_cast<unsigned char>(q & 0xff),
                          static_cast<unsigned char>((q >> 8) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 2);
  }
  if (!out) throw IoError("write failed for " + path);
}

AudioClip pad_or_truncate(const AudioClip& clip, int64_t target_len) {
  AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  out.samples.assign(static_cast<size_t>(target_len), 0.0f);
  size_t n = std::min<size_t>(clip.samples.size(), static_cast<size_t>(target_len));
  std::copy(clip.samples.begin(), clip.samples.begin() + static_cast<long>(n),
            out.samples.begin());
  return out;
}

AudioClip peak_normalize(const AudioClip& clip) {
  float peak = 0.0f;
  for (float s : clip.samples) peak = std::max(peak, std::fabs(s));
  if (peak == 0.0f) return clip;
  AudioClip out = clip;
  for (float& s : out.samples) s /= peak;
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line != "path,label")
        throw CorruptHeader("manifest header must be `path,label`, got `" + line + "`");
      continue;
    }
    auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw CorruptHeader("bad manifest row: " + line);
    entries.push_back({line.substr(0, comma), line.substr(comma + 1)});
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << "path,label\n";
  for (const auto& e : entries) out << e.path << ',' << e.label << '\n';
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace icn
