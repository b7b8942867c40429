#pragma once

#include <filesystem>
#include <string>

#include "cmrt/dsp.hpp"
#include "cmrt/model/model.hpp"
#include "cmrt/tokenizer.hpp"
#include "cmrt/trainer/trainer.hpp"

namespace cmrt::test {

/// About a thousand parameters at 1.6 kHz with a 16-sample stride.
inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.sample_rate = 1600;
  c.frame_stride = 16;
  c.conv = {{4, 4, 4}, {4, 4, 4}};
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ffn_dim = 16;
  c.d_embed = 4;
  c.K = 2;
  c.C = 4;
  c.cqt_bins = 6;
  c.max_frames = 16;
  c.mask_start_prob = 0.3;
  c.mask_span = 3;
  return c;
}

inline dsp::CqtSettings tiny_cqt(const model::ModelConfig& c) {
  dsp::CqtSettings s;
  s.f_min = 65.41;
  s.bins_per_octave = 12;
  s.n_bins = c.cqt_bins;
  s.frame_rate = static_cast<double>(c.sample_rate) / static_cast<double>(c.frame_stride);
  return s;
}

inline trainer::Teachers tiny_teachers(const model::ModelConfig& c, std::uint64_t seed = 5) {
  return {tokenizer::RvqCodec(c.K, c.C, 6, seed), tiny_cqt(c)};
}

inline dsp::AudioBuffer noise(std::size_t n, int sr, std::uint64_t seed, double amp = 0.3) {
  Rng rng(seed);
  dsp::AudioBuffer b{std::vector<double>(n), sr};
  for (double& v : b.samples) v = amp * rng.uniform(-1.0, 1.0);
  return b;
}

/// A fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cmrt_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace cmrt::test
