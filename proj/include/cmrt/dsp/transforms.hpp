#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmrt/dsp/audio.hpp"
#include "cmrt/dsp/fft.hpp"
#include "cmrt/rng.hpp"

namespace cmrt::dsp {

/// Band-limited resampling by spectral truncation / zero-extension.
inline AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
  validate(buf, "resample");
  require(target_rate > 0, "resample: target_rate must be positive");
  if (target_rate == buf.sample_rate) return buf;

  const std::size_t n_in = buf.size();
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_in) * target_rate / buf.sample_rate));
  require(n_out > 0, "resample: output would be empty");

  RealFft fwd(n_in);
  const auto spectrum = fwd.forward(buf.samples);
  std::vector<std::complex<double>> out_spec(n_out / 2 + 1, {0.0, 0.0});
  const std::size_t shared = std::min(n_in, n_out);
  const std::size_t keep = shared / 2 + 1;
  for (std::size_t i = 0; i < keep; ++i) out_spec[i] = spectrum[i];
  if (shared % 2 == 0) {
    // The shared Nyquist bin stands for both +/- halves in a real spectrum.
    if (n_out < n_in) out_spec[shared / 2] *= 2.0;
    else out_spec[shared / 2] *= 0.5;
  }
  InverseRealFft inv(n_out);
  auto y = inv.inverse(out_spec);
  const double scale = 1.0 / static_cast<double>(n_in);
  for (double& v : y) v *= scale;
  return AudioBuffer{std::move(y), target_rate};
}

enum class PadPolicy { reject, zero_pad };

inline AudioBuffer crop_segment(const AudioBuffer& buf, double start, double length, PadPolicy pad) {
  validate(buf, "crop_segment");
  require(start >= 0.0, "crop_segment: start must be non-negative");
  require(length > 0.0, "crop_segment: length must be positive");
  const auto first = static_cast<std::size_t>(std::llround(start * buf.sample_rate));
  const auto count = static_cast<std::size_t>(std::llround(length * buf.sample_rate));
  require(count > 0, "crop_segment: length shorter than one sample");
  if (first + count > buf.size() && pad == PadPolicy::reject) {
    throw Error(ErrorKind::precondition,
                "crop_segment: requested [" + std::to_string(start) + " s, +" + std::to_string(length) +
                    " s) exceeds source of " + std::to_string(buf.duration()) + " s");
  }
  AudioBuffer out{std::vector<double>(count, 0.0), buf.sample_rate};
  for (std::size_t i = 0; i < count && first + i < buf.size(); ++i) out.samples[i] = buf.samples[first + i];
  return out;
}

inline constexpr double kMixupGainMin = 0.1;
inline constexpr double kMixupGainMax = 0.5;

/// In-batch noise mixture: each element is, with probability `prob`, blended
/// with a different, uniformly chosen element of the input batch. Without an
/// explicit gain the gain is drawn from U[0.1, 0.5] per mixed element.
inline std::vector<AudioBuffer> mixup_batch(const std::vector<AudioBuffer>& batch, double prob,
                                            std::optional<double> gain, std::uint64_t rng_seed) {
  require(prob >= 0.0 && prob <= 1.0, "mixup_batch: prob must be in [0, 1]");
  if (gain) require(*gain > 0.0 && *gain < 1.0, "mixup_batch: gain must be in (0, 1)");
  for (const auto& b : batch) {
    require(b.size() == batch.front().size() && b.sample_rate == batch.front().sample_rate,
            "mixup_batch: batch elements differ in length or sample rate", ErrorKind::shape);
  }
  std::vector<AudioBuffer> out = batch;
  if (prob == 0.0 || batch.empty()) return out;
  require(batch.size() >= 2, "mixup_batch: batch of at least 2 required when prob > 0");

  Rng rng(rng_seed);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!rng.bernoulli(prob)) continue;
    std::size_t j = rng.index(batch.size() - 1);
    if (j >= i) ++j;
    const double g = gain ? *gain : rng.uniform(kMixupGainMin, kMixupGainMax);
    auto& dst = out[i].samples;
    const auto& other = batch[j].samples;
    for (std::size_t s = 0; s < dst.size(); ++s) dst[s] = (1.0 - g) * batch[i].samples[s] + g * other[s];
  }
  return out;
}

}  // namespace cmrt::dsp
