#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cmrt/dsp/audio.hpp"

namespace cmrt::dsp {

enum class WavFormat { pcm16, float32 };

namespace detail {

inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Mono RIFF/WAVE encoder. PCM16 clips to [-1, 1].
inline std::string encode_wav(const AudioBuffer& buf, WavFormat fmt) {
  const std::uint16_t bits = fmt == WavFormat::pcm16 ? 16 : 32;
  const std::uint16_t tag = fmt == WavFormat::pcm16 ? 1 : 3;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(buf.size() * (bits / 8));
  std::string s;
  s.reserve(44 + data_bytes);
  s += "RIFF";
  detail::put_u32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  detail::put_u32(s, 16);
  detail::put_u16(s, tag);
  detail::put_u16(s, 1);
  detail::put_u32(s, static_cast<std::uint32_t>(buf.sample_rate));
  detail::put_u32(s, static_cast<std::uint32_t>(buf.sample_rate) * (bits / 8));
  detail::put_u16(s, bits / 8);
  detail::put_u16(s, bits);
  s += "data";
  detail::put_u32(s, data_bytes);
  for (double v : buf.samples) {
    if (fmt == WavFormat::pcm16) {
      const double c = std::clamp(v, -1.0, 1.0);
      const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
      detail::put_u16(s, static_cast<std::uint16_t>(q));
    } else {
      const float f = static_cast<float>(v);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      detail::put_u32(s, u);
    }
  }
  return s;
}

/// Decodes PCM16 or IEEE float32 (plain or WAVE_FORMAT_EXTENSIBLE); multiple
/// channels are averaged to mono.
inline AudioBuffer decode_wav(const std::string& bytes, const std::string& origin = "<memory>") {
  auto fail = [&](const std::string& why) { return Error(ErrorKind::format, origin + ": " + why); };
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  std::uint16_t tag = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = detail::get_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw fail("chunk extends past end of file");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (len < 16) throw fail("fmt chunk too short");
      tag = detail::get_u16(p + body);
      channels = detail::get_u16(p + body + 2);
      rate = detail::get_u32(p + body + 4);
      bits = detail::get_u16(p + body + 14);
      if (tag == 0xFFFE && len >= 26) tag = detail::get_u16(p + body + 24);
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (channels == 0 || rate == 0) throw fail("invalid channel count or sample rate");
      const bool pcm16 = tag == 1 && bits == 16;
      const bool f32 = tag == 3 && bits == 32;
      if (!pcm16 && !f32) throw fail("unsupported encoding (tag " + std::to_string(tag) + ", " +
                                     std::to_string(bits) + " bits)");
      const std::size_t width = bits / 8;
      const std::size_t frames = len / (width * channels);
      AudioBuffer out{std::vector<double>(frames, 0.0), static_cast<int>(rate)};
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const unsigned char* q = p + body + (i * channels + c) * width;
          if (pcm16) {
            acc += static_cast<std::int16_t>(detail::get_u16(q)) / 32767.0;
          } else {
            const std::uint32_t u = detail::get_u32(q);
            float f;
            std::memcpy(&f, &u, 4);
            acc += f;
          }
        }
        out.samples[i] = acc / channels;
      }
      return out;
    }
    pos = body + len + (len & 1);
  }
  throw fail("no data chunk");
}

inline void write_wav(const std::filesystem::path& path, const AudioBuffer& buf, WavFormat fmt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_wav(buf, fmt);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorKind::io, "write failed for '" + path.string() + "'");
}

inline AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

}  // namespace cmrt::dsp
