#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cmrt/error.hpp"

namespace cmrt::dsp {

inline constexpr int kDefaultSampleRate = 24000;
inline constexpr std::size_t kDefaultHop = 320;  // 75 Hz at 24 kHz

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  friend bool operator==(const AudioBuffer&, const AudioBuffer&) = default;
};

inline void validate(const AudioBuffer& buf, const char* where) {
  require(buf.sample_rate > 0, std::string(where) + ": sample_rate must be positive");
  require(!buf.samples.empty(), std::string(where) + ": audio buffer is empty");
}

/// Frames on the hop grid: frame k is centred on sample k * hop.
inline std::size_t frame_count(std::size_t n_samples, std::size_t hop) {
  return (n_samples + hop - 1) / hop;
}

/// Reflection about the first and last sample, repeated for indices far
/// outside [0, n).
inline std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long r = i % period;
  if (r < 0) r += period;
  if (r >= static_cast<long>(n)) r = period - r;
  return static_cast<std::size_t>(r);
}

}  // namespace cmrt::dsp
