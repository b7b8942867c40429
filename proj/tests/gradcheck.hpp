#pragma once

#include <algorithm>
#include <cmath>

#include "cmrt/losses.hpp"
#include "cmrt/model/model.hpp"
#include "support.hpp"

namespace cmrt::test {

struct GradCheckResult {
  std::size_t coordinates = 0;
  std::size_t within_rel = 0;   // relative error < 1e-4
  std::size_t rest_violations = 0;  // outside 1e-4 relative and 1e-6 absolute
  double worst_rel = 0.0;
  double worst_abs = 0.0;

  double rel_fraction() const { return coordinates ? static_cast<double>(within_rel) / coordinates : 0.0; }
  bool passed() const { return rel_fraction() >= 0.99 && rest_violations == 0; }
};

/// Analytic gradient of the combined loss against central differences
/// (step 1e-5) for every parameter of a randomly perturbed tiny model.
inline GradCheckResult gradient_check(double alpha = 10.0, std::uint64_t seed = 1) {
  const auto cfg = tiny_config();
  auto params = model::init_model(cfg);
  Rng rng(seed);
  for (auto& [name, t] : params) {
    for (double& v : t.data) v += 0.1 * rng.normal();
  }
  const std::size_t frames = 8;
  const auto buf = noise(frames * cfg.frame_stride, cfg.sample_rate, seed + 1, 0.8);

  tokenizer::TokenSequence tokens{frames, cfg.K, cfg.C, {}};
  for (std::size_t i = 0; i < frames * cfg.K; ++i) tokens.tokens.push_back(static_cast<std::int32_t>(rng.index(cfg.C)));
  dsp::CqtMatrix cqt;
  cqt.frames = frames;
  cqt.bins = cfg.cqt_bins;
  for (std::size_t i = 0; i < frames * cfg.cqt_bins; ++i) cqt.magnitudes.push_back(rng.uniform());
  model::MaskSpec mask = model::MaskSpec::none(frames);
  for (std::size_t t : {1u, 2u, 3u, 6u}) mask.flags[t] = 1;
  const losses::LossConfig lc{alpha};

  auto loss_at = [&](const model::ModelParams& p) {
    model::ForwardTrace trace;
    const auto out = model::forward_masked(p, cfg, buf, mask, trace);
    return losses::combined_loss(out, tokens, cqt, mask, lc).total;
  };

  model::ForwardTrace trace;
  const auto out = model::forward_masked(params, cfg, buf, mask, trace);
  model::OutputGrads dout;
  (void)losses::combined_loss_with_grad(out, tokens, cqt, mask, lc, dout);
  TensorMap grads = params.zeros_like();
  model::backward(params, cfg, trace, out, dout, grads);

  GradCheckResult r;
  const double h = 1e-5;
  for (auto& [name, t] : params) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t.data[i];
      t.data[i] = keep + h;
      const double up = loss_at(params);
      t.data[i] = keep - h;
      const double down = loss_at(params);
      t.data[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads.at(name).data[i];
      const double abs_err = std::abs(analytic - numeric);
      const double rel_err = abs_err / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      ++r.coordinates;
      r.within_rel += rel_err < 1e-4;
      r.rest_violations += rel_err >= 1e-4 && abs_err >= 1e-6;
      r.worst_rel = std::max(r.worst_rel, rel_err);
      r.worst_abs = std::max(r.worst_abs, abs_err);
    }
  }
  return r;
}

}  // namespace cmrt::test
