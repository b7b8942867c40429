#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "cmrt/dsp/audio.hpp"
#include "cmrt/rng.hpp"

namespace cmrt::dsp {

inline AudioBuffer synth_sine(double freq, double duration, int sample_rate, double amplitude) {
  require(sample_rate > 0, "synth_sine: sample_rate must be positive");
  require(freq > 0.0 && freq < sample_rate / 2.0,
          "synth_sine: frequency " + std::to_string(freq) + " Hz outside (0, Nyquist=" +
              std::to_string(sample_rate / 2.0) + ")");
  require(duration > 0.0, "synth_sine: duration must be positive");
  require(amplitude > 0.0 && amplitude <= 1.0, "synth_sine: amplitude must be in (0, 1]");
  const auto n = static_cast<std::size_t>(std::llround(duration * sample_rate));
  require(n > 0, "synth_sine: duration shorter than one sample");
  AudioBuffer out{std::vector<double>(n), sample_rate};
  const double w = 2.0 * std::numbers::pi * freq / sample_rate;
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = amplitude * std::sin(w * static_cast<double>(i));
  return out;
}

/// Synthetic "musical culture": a scale (pitch set), a timbre and a tempo
/// range. Distinct scales make token statistics differ by construction.
struct SynthCultureSpec {
  std::vector<double> pitch_set;  // fundamentals in Hz
  std::uint64_t timbre_seed = 0;
  std::pair<double, double> tempo_range{2.0, 4.0};  // events per second
  std::uint64_t rng_seed = 0;
  int sample_rate = kDefaultSampleRate;
  double f_min = 32.70;
  /// When > 0, each clip draws its notes from a random subset of this many
  /// pitches, which gives clip-level tags some variety.
  std::size_t subset_size = 0;
};

inline void validate(const SynthCultureSpec& spec) {
  require(!spec.pitch_set.empty(), "synth_culture_clip: pitch_set is empty");
  for (double f : spec.pitch_set) {
    require(f >= spec.f_min && f < spec.sample_rate / 2.0,
            "synth_culture_clip: pitch " + std::to_string(f) + " Hz outside [f_min, Nyquist)");
  }
  require(spec.tempo_range.first > 0.0 && spec.tempo_range.first <= spec.tempo_range.second,
          "synth_culture_clip: invalid tempo range");
  require(spec.subset_size <= spec.pitch_set.size(), "synth_culture_clip: subset_size too large");
}

struct SynthClip {
  AudioBuffer audio;
  std::vector<std::size_t> notes;            // pitch_set index of each event
  std::vector<bool> pitch_present;           // per pitch_set entry
};

/// Harmonic amplitudes shared by every clip of a culture.
inline std::vector<double> culture_timbre(std::uint64_t timbre_seed) {
  Rng rng(derive_seed(timbre_seed, 0x7157));
  std::vector<double> h{1.0};
  for (int k = 2; k <= 4; ++k) h.push_back(rng.uniform(0.1, 0.5) / k);
  return h;
}

inline SynthClip synth_culture_clip_tagged(const SynthCultureSpec& spec, double duration) {
  validate(spec);
  require(duration > 0.0, "synth_culture_clip: duration must be positive");
  const int sr = spec.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(duration * sr));
  require(n > 0, "synth_culture_clip: duration shorter than one sample");

  Rng rng(spec.rng_seed);
  const std::vector<double> harmonics = culture_timbre(spec.timbre_seed);

  std::vector<std::size_t> palette(spec.pitch_set.size());
  for (std::size_t i = 0; i < palette.size(); ++i) palette[i] = i;
  if (spec.subset_size > 0) {
    rng.shuffle(palette.begin(), palette.end());
    palette.resize(spec.subset_size);
    std::sort(palette.begin(), palette.end());
  }

  SynthClip clip{AudioBuffer{std::vector<double>(n, 0.0), sr}, {},
                 std::vector<bool>(spec.pitch_set.size(), false)};
  std::size_t pos = 0;
  while (pos < n) {
    const double tempo = rng.uniform(spec.tempo_range.first, spec.tempo_range.second);
    const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sr / tempo)));
    const std::size_t note = palette[rng.index(palette.size())];
    const double f0 = spec.pitch_set[note];
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    clip.notes.push_back(note);
    clip.pitch_present[note] = true;

    const double attack = 0.01 * sr;
    const double decay = 0.35 * static_cast<double>(len);
    const std::size_t end = std::min(n, pos + len);
    for (std::size_t i = pos; i < end; ++i) {
      const double t = static_cast<double>(i - pos);
      const double env = std::min(1.0, t / attack) * std::exp(-t / decay);
      double v = 0.0;
      for (std::size_t h = 0; h < harmonics.size(); ++h) {
        const double fh = f0 * static_cast<double>(h + 1);
        if (fh >= sr / 2.0) break;
        v += harmonics[h] * std::sin(2.0 * std::numbers::pi * fh * t / sr + phase * (h + 1));
      }
      clip.audio.samples[i] = 0.5 * env * v;
    }
    pos += len;
  }
  return clip;
}

inline AudioBuffer synth_culture_clip(const SynthCultureSpec& spec, double duration) {
  return synth_culture_clip_tagged(spec, duration).audio;
}

/// Equal-tempered pitches f_min * 2^(semitone/12).
inline std::vector<double> scale_from_semitones(double reference_hz, const std::vector<int>& semitones) {
  std::vector<double> out;
  out.reserve(semitones.size());
  for (int s : semitones) out.push_back(reference_hz * std::exp2(s / 12.0));
  return out;
}

}  // namespace cmrt::dsp
