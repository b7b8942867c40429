#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "cmrt/dsp/audio.hpp"

namespace cmrt::dsp {

struct CqtSettings {
  double f_min = 32.70;  // C1
  int bins_per_octave = 12;
  std::size_t n_bins = 84;
  double frame_rate = 75.0;

  friend bool operator==(const CqtSettings&, const CqtSettings&) = default;
};

/// Constant-Q magnitude spectrogram, frames x bins row-major.
struct CqtMatrix {
  std::vector<double> magnitudes;
  std::size_t frames = 0;
  std::size_t bins = 0;
  int bins_per_octave = 12;
  double f_min = 32.70;
  double frame_rate = 75.0;

  double at(std::size_t frame, std::size_t bin) const { return magnitudes[frame * bins + bin]; }
  const double* row(std::size_t frame) const { return magnitudes.data() + frame * bins; }

  std::size_t argmax_bin(std::size_t frame) const {
    const double* r = row(frame);
    return static_cast<std::size_t>(std::max_element(r, r + bins) - r);
  }
};

inline double cqt_bin_frequency(double f_min, int bins_per_octave, std::size_t bin) {
  return f_min * std::exp2(static_cast<double>(bin) / bins_per_octave);
}

/// Closed-form bin index of a frequency.
inline long cqt_bin_of(double freq, double f_min, int bins_per_octave) {
  return std::lround(bins_per_octave * std::log2(freq / f_min));
}

/// Per-bin Q-matched Hann kernels. Bin k has window length ~ Q * sr / f_k with
/// Q = 1 / (2^(1/B) - 1), so its bandwidth equals the bin spacing. Each frame
/// is centred on sample m * hop and the signal is reflection-padded, which
/// makes frame count ceil(len / hop). A unit sinusoid at a bin centre maps to
/// magnitude ~1.
class CqtTransform {
 public:
  CqtTransform(int sample_rate, const CqtSettings& s) : sample_rate_(sample_rate), settings_(s) {
    require(sample_rate > 0, "compute_cqt: sample_rate must be positive");
    require(s.f_min > 0.0, "compute_cqt: f_min must be positive");
    require(s.bins_per_octave > 0 && s.n_bins > 0, "compute_cqt: bin counts must be positive");
    require(s.frame_rate > 0.0, "compute_cqt: frame_rate must be positive");
    const double hop = sample_rate / s.frame_rate;
    require(std::abs(hop - std::round(hop)) < 1e-9,
            "compute_cqt: frame_rate must divide sample_rate (hop = " + std::to_string(hop) + ")");
    hop_ = static_cast<std::size_t>(std::llround(hop));
    const double top = cqt_bin_frequency(s.f_min, s.bins_per_octave, s.n_bins - 1);
    require(top < sample_rate / 2.0, "compute_cqt: top bin " + std::to_string(top) +
                                         " Hz is at or above Nyquist " + std::to_string(sample_rate / 2.0));

    const double q = 1.0 / (std::exp2(1.0 / s.bins_per_octave) - 1.0);
    kernels_.resize(s.n_bins);
    for (std::size_t k = 0; k < s.n_bins; ++k) {
      const double fk = cqt_bin_frequency(s.f_min, s.bins_per_octave, k);
      auto len = static_cast<std::size_t>(std::ceil(q * sample_rate / fk));
      if (len % 2 == 0) ++len;
      Kernel& kern = kernels_[k];
      kern.half = len / 2;
      kern.re.resize(len);
      kern.im.resize(len);
      double wsum = 0.0;
      for (std::size_t n = 0; n < len; ++n) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (n + 0.5) / len);
        wsum += w;
        const double offset = static_cast<double>(n) - static_cast<double>(kern.half);
        const double ph = -2.0 * std::numbers::pi * fk * offset / sample_rate;
        kern.re[n] = w * std::cos(ph);
        kern.im[n] = w * std::sin(ph);
      }
      const double norm = 2.0 / wsum;
      for (std::size_t n = 0; n < len; ++n) {
        kern.re[n] *= norm;
        kern.im[n] *= norm;
      }
      max_half_ = std::max(max_half_, kern.half);
    }
  }

  std::size_t hop() const { return hop_; }
  int sample_rate() const { return sample_rate_; }
  const CqtSettings& settings() const { return settings_; }

  CqtMatrix operator()(const AudioBuffer& buf) const {
    validate(buf, "compute_cqt");
    require(buf.sample_rate == sample_rate_, "compute_cqt: sample rate " + std::to_string(buf.sample_rate) +
                                                 " does not match transform rate " +
                                                 std::to_string(sample_rate_));
    const std::size_t n = buf.size();
    const std::size_t frames = frame_count(n, hop_);
    // Padded copy: padded[i + max_half] = x[reflect(i)].
    const std::size_t pad = max_half_;
    std::vector<double> padded(n + 2 * pad + hop_);
    for (std::size_t i = 0; i < padded.size(); ++i) {
      padded[i] = buf.samples[reflect_index(static_cast<long>(i) - static_cast<long>(pad), n)];
    }

    CqtMatrix out;
    out.frames = frames;
    out.bins = settings_.n_bins;
    out.bins_per_octave = settings_.bins_per_octave;
    out.f_min = settings_.f_min;
    out.frame_rate = settings_.frame_rate;
    out.magnitudes.assign(frames * out.bins, 0.0);
    for (std::size_t m = 0; m < frames; ++m) {
      const std::size_t centre = m * hop_ + pad;
      for (std::size_t k = 0; k < out.bins; ++k) {
        const Kernel& kern = kernels_[k];
        const double* x = padded.data() + centre - kern.half;
        double re = 0.0, im = 0.0;
        const std::size_t len = kern.re.size();
        for (std::size_t i = 0; i < len; ++i) {
          re += x[i] * kern.re[i];
          im += x[i] * kern.im[i];
        }
        out.magnitudes[m * out.bins + k] = std::hypot(re, im);
      }
    }
    return out;
  }

 private:
  struct Kernel {
    std::size_t half = 0;
    std::vector<double> re, im;
  };

  int sample_rate_;
  CqtSettings settings_;
  std::size_t hop_ = 0;
  std::size_t max_half_ = 0;
  std::vector<Kernel> kernels_;
};

inline CqtMatrix compute_cqt(const AudioBuffer& buf, double f_min, int bins_per_octave, std::size_t n_bins,
                             double frame_rate) {
  return CqtTransform(buf.sample_rate, CqtSettings{f_min, bins_per_octave, n_bins, frame_rate})(buf);
}

/// Frames as rows, bins as columns; header row lists bin centre frequencies.
inline void write_cqt_csv(std::ostream& os, const CqtMatrix& m) {
  os.precision(17);
  os << "frame";
  for (std::size_t k = 0; k < m.bins; ++k) os << ',' << cqt_bin_frequency(m.f_min, m.bins_per_octave, k);
  os << '\n';
  for (std::size_t t = 0; t < m.frames; ++t) {
    os << t;
    for (std::size_t k = 0; k < m.bins; ++k) os << ',' << m.at(t, k);
    os << '\n';
  }
}

}  // namespace cmrt::dsp
