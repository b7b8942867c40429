#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cmrt/dsp/audio.hpp"
#include "cmrt/dsp/fft.hpp"
#include "cmrt/rng.hpp"
#include "cmrt/tensor.hpp"

namespace cmrt::tokenizer {

/// Row-major frames x dim feature matrix.
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t t) const { return {values.data() + t * dim, dim}; }
  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

/// Frozen residual vector quantizer: K codebooks of C unit-norm codewords in R^D.
class RvqCodec {
 public:
  RvqCodec(std::size_t K, std::size_t C, std::size_t D, std::uint64_t seed)
      : K_(K), C_(C), D_(D), seed_(seed) {
    require(K >= 1 && C >= 1 && D >= 1, "init_rvq_codec: K, C and D must be >= 1");
    Rng rng(seed);
    codebooks_.resize(K);
    for (auto& book : codebooks_) {
      book.resize(C * D);
      for (std::size_t c = 0; c < C; ++c) {
        double* e = book.data() + c * D;
        double norm2 = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
          e[d] = rng.normal();
          norm2 += e[d] * e[d];
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t d = 0; d < D; ++d) e[d] *= inv;
      }
    }
  }

  std::size_t K() const { return K_; }
  std::size_t C() const { return C_; }
  std::size_t D() const { return D_; }
  std::uint64_t seed() const { return seed_; }

  std::span<const double> codeword(std::size_t k, std::size_t c) const {
    return {codebooks_[k].data() + c * D_, D_};
  }
  const std::vector<double>& codebook(std::size_t k) const { return codebooks_[k]; }

  /// Tensors named rvq/codebook.{k}, each [C x D].
  TensorMap to_tensors() const {
    TensorMap m;
    for (std::size_t k = 0; k < K_; ++k) {
      m.set("rvq/codebook." + std::to_string(k), Tensor({C_, D_}, codebooks_[k]));
    }
    return m;
  }

  static RvqCodec from_tensors(const TensorMap& m, std::uint64_t seed) {
    std::size_t K = 0;
    while (m.contains("rvq/codebook." + std::to_string(K))) ++K;
    require(K > 0, "codec tensors missing rvq/codebook.0", ErrorKind::format);
    const Tensor& first = m.at("rvq/codebook.0");
    require(first.rank() == 2, "codebook must be rank 2", ErrorKind::format);
    RvqCodec codec(K, first.dim(0), first.dim(1), seed);
    for (std::size_t k = 0; k < K; ++k) {
      const Tensor& t = m.at("rvq/codebook." + std::to_string(k));
      require(t.shape == first.shape, "codebook shapes differ", ErrorKind::format);
      codec.codebooks_[k] = t.data;
    }
    return codec;
  }

  friend bool operator==(const RvqCodec&, const RvqCodec&) = default;

 private:
  std::size_t K_, C_, D_;
  std::uint64_t seed_;
  std::vector<std::vector<double>> codebooks_;
};

inline RvqCodec init_rvq_codec(std::size_t K, std::size_t C, std::size_t D, std::uint64_t seed) {
  return RvqCodec(K, C, D, seed);
}

/// frames x K codeword indices.
struct TokenSequence {
  std::size_t frames = 0;
  std::size_t K = 0;
  std::size_t C = 0;
  std::vector<std::int32_t> tokens;

  std::int32_t at(std::size_t t, std::size_t k) const { return tokens[t * K + k]; }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Log-magnitude spectrum on the shared hop grid, projected to D dims by a
/// fixed seeded matrix. Projection rows are zero-mean, so a spectrum that is
/// flat in log-magnitude (e.g. silence at the floor) projects to ~0.
class FeatureFrontEnd {
 public:
  static constexpr std::size_t kFftSize = 1024;
  static constexpr double kLogFloor = 1e-4;
  static constexpr std::uint64_t kProjectionSeed = 0x5EED'F00D;

  explicit FeatureFrontEnd(std::size_t D, std::size_t hop = dsp::kDefaultHop,
                           std::uint64_t projection_seed = kProjectionSeed)
      : D_(D), hop_(hop), fft_(kFftSize), window_(kFftSize), projection_(D * n_bins()) {
    require(D >= 1, "frame_features: D must be >= 1");
    require(hop >= 1, "frame_features: hop must be >= 1");
    double wsum = 0.0;
    for (std::size_t i = 0; i < kFftSize; ++i) {
      window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / kFftSize);
      wsum += window_[i];
    }
    for (double& w : window_) w *= 2.0 / wsum;
    Rng rng(projection_seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_bins()));
    for (std::size_t d = 0; d < D; ++d) {
      double* row = projection_.data() + d * n_bins();
      double mean = 0.0;
      for (std::size_t b = 0; b < n_bins(); ++b) {
        row[b] = rng.normal() * scale;
        mean += row[b];
      }
      mean /= static_cast<double>(n_bins());
      for (std::size_t b = 0; b < n_bins(); ++b) row[b] -= mean;
    }
  }

  static constexpr std::size_t n_bins() { return kFftSize / 2 + 1; }
  std::size_t dim() const { return D_; }

  FeatureMatrix operator()(const dsp::AudioBuffer& buf) {
    dsp::validate(buf, "frame_features");
    const std::size_t n = buf.size();
    FeatureMatrix out;
    out.frames = dsp::frame_count(n, hop_);
    out.dim = D_;
    out.values.assign(out.frames * D_, 0.0);
    std::vector<double> frame(kFftSize), mag(n_bins());
    const long half = static_cast<long>(kFftSize / 2);
    for (std::size_t t = 0; t < out.frames; ++t) {
      const long centre = static_cast<long>(t * hop_);
      for (std::size_t i = 0; i < kFftSize; ++i) {
        frame[i] = window_[i] * buf.samples[dsp::reflect_index(centre - half + static_cast<long>(i), n)];
      }
      fft_.magnitudes(frame, mag);
      for (double& m : mag) m = std::log(m + kLogFloor);
      double* dst = out.values.data() + t * D_;
      for (std::size_t d = 0; d < D_; ++d) {
        const double* row = projection_.data() + d * n_bins();
        double acc = 0.0;
        for (std::size_t b = 0; b < n_bins(); ++b) acc += row[b] * mag[b];
        dst[d] = acc;
      }
    }
    return out;
  }

  /// The projection applied to an arbitrary log-spectrum (test hook).
  std::vector<double> project(std::span<const double> log_spectrum) const {
    std::vector<double> out(D_, 0.0);
    for (std::size_t d = 0; d < D_; ++d) {
      for (std::size_t b = 0; b < n_bins(); ++b) out[d] += projection_[d * n_bins() + b] * log_spectrum[b];
    }
    return out;
  }

 private:
  std::size_t D_;
  std::size_t hop_;
  dsp::RealFft fft_;
  std::vector<double> window_;
  std::vector<double> projection_;
};

inline FeatureMatrix frame_features(const dsp::AudioBuffer& buf, std::size_t D) {
  FeatureFrontEnd fe(D);
  return fe(buf);
}

/// Greedy residual quantization; argmin ties resolve to the lowest index.
inline TokenSequence tokenize(const RvqCodec& codec, const FeatureMatrix& features) {
  require(features.dim == codec.D(), "tokenize: feature dim " + std::to_string(features.dim) +
                                         " != codec dim " + std::to_string(codec.D()),
          ErrorKind::shape);
  TokenSequence seq{features.frames, codec.K(), codec.C(), std::vector<std::int32_t>(features.frames * codec.K())};
  std::vector<double> residual(codec.D());
  for (std::size_t t = 0; t < features.frames; ++t) {
    const auto f = features.row(t);
    residual.assign(f.begin(), f.end());
    for (std::size_t k = 0; k < codec.K(); ++k) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < codec.C(); ++c) {
        const auto e = codec.codeword(k, c);
        double dist = 0.0;
        for (std::size_t d = 0; d < codec.D(); ++d) {
          const double diff = residual[d] - e[d];
          dist += diff * diff;
        }
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      seq.tokens[t * codec.K() + k] = static_cast<std::int32_t>(best);
      const auto e = codec.codeword(k, best);
      for (std::size_t d = 0; d < codec.D(); ++d) residual[d] -= e[d];
    }
  }
  return seq;
}

struct TokenHistogram {
  std::size_t K = 0;
  std::size_t C = 0;
  std::vector<std::vector<std::uint64_t>> counts;  // [K][C]
  std::vector<std::uint64_t> totals;               // [K]

  TokenHistogram() = default;
  TokenHistogram(std::size_t k, std::size_t c)
      : K(k), C(c), counts(k, std::vector<std::uint64_t>(c, 0)), totals(k, 0) {}

  TokenHistogram& operator+=(const TokenHistogram& o) {
    require(K == o.K && C == o.C, "histogram (K, C) mismatch", ErrorKind::shape);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t c = 0; c < C; ++c) counts[k][c] += o.counts[k][c];
      totals[k] += o.totals[k];
    }
    return *this;
  }

  friend bool operator==(const TokenHistogram&, const TokenHistogram&) = default;
};

inline TokenHistogram token_histogram(std::span<const TokenSequence> seqs, std::size_t K, std::size_t C) {
  TokenHistogram h(K, C);
  for (const auto& s : seqs) {
    require(s.K == K && s.C == C,
            "token_histogram: sequence has (K=" + std::to_string(s.K) + ", C=" + std::to_string(s.C) +
                "), expected (K=" + std::to_string(K) + ", C=" + std::to_string(C) + ")",
            ErrorKind::shape);
    for (std::size_t t = 0; t < s.frames; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const auto c = s.at(t, k);
        require(c >= 0 && static_cast<std::size_t>(c) < C, "token_histogram: token out of range");
        ++h.counts[k][static_cast<std::size_t>(c)];
        ++h.totals[k];
      }
    }
  }
  return h;
}

/// Rows are codeword indices, columns codebooks.
inline void write_histogram_csv(std::ostream& os, const TokenHistogram& h) {
  os << "codeword";
  for (std::size_t k = 0; k < h.K; ++k) os << ",codebook" << k;
  os << '\n';
  for (std::size_t c = 0; c < h.C; ++c) {
    os << c;
    for (std::size_t k = 0; k < h.K; ++k) os << ',' << h.counts[k][c];
    os << '\n';
  }
}

}  // namespace cmrt::tokenizer
