#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cmrt/dsp/cqt.hpp"
#include "cmrt/model/model.hpp"
#include "cmrt/tokenizer.hpp"

namespace cmrt::losses {

using model::MaskSpec;

struct LossConfig {
  double alpha = 10.0;  // weight of the acoustic-token term
};

struct LossBreakdown {
  double rvq = 0.0;
  double cqt = 0.0;
  double total = 0.0;
  std::size_t masked_frame_count = 0;
};

/// Read-only view of [frames x K x C] logits.
struct LogitView {
  std::span<const double> values;
  std::size_t frames = 0, K = 0, C = 0;

  static LogitView of(const model::ForwardOutput& out) { return {out.rvq_logits, out.frames, out.K, out.C}; }
};

/// Mean over masked frames and codebooks of -log softmax(logits)[target].
/// An empty mask yields 0. When `grad` is given, scale * dLoss/dlogits is
/// accumulated into it.
inline double rvq_nce_loss(const LogitView& logits, const tokenizer::TokenSequence& targets, const MaskSpec& mask,
                           std::vector<double>* grad = nullptr, double scale = 1.0) {
  require(logits.values.size() == logits.frames * logits.K * logits.C, "rvq_nce_loss: logits size mismatch",
          ErrorKind::shape);
  require(targets.frames == logits.frames && targets.K == logits.K,
          "rvq_nce_loss: targets (" + std::to_string(targets.frames) + " x " + std::to_string(targets.K) +
              ") do not match logits (" + std::to_string(logits.frames) + " x " + std::to_string(logits.K) + ")",
          ErrorKind::shape);
  require(mask.total_frames == logits.frames, "rvq_nce_loss: mask frame count mismatch", ErrorKind::shape);
  const std::size_t m = mask.count();
  if (m == 0) return 0.0;
  const double norm = 1.0 / static_cast<double>(m * logits.K);
  double loss = 0.0;
  std::vector<double> prob(logits.C);
  for (std::size_t t = 0; t < logits.frames; ++t) {
    if (!mask.contains(t)) continue;
    for (std::size_t k = 0; k < logits.K; ++k) {
      const auto target = targets.at(t, k);
      require(target >= 0 && static_cast<std::size_t>(target) < logits.C, "rvq_nce_loss: target out of range");
      const double* row = logits.values.data() + (t * logits.K + k) * logits.C;
      const double mx = *std::max_element(row, row + logits.C);
      double z = 0.0;
      for (std::size_t c = 0; c < logits.C; ++c) z += std::exp(row[c] - mx);
      const double lse = mx + std::log(z);
      loss += lse - row[target];
      if (grad) {
        double* g = grad->data() + (t * logits.K + k) * logits.C;
        for (std::size_t c = 0; c < logits.C; ++c) g[c] += scale * norm * std::exp(row[c] - lse);
        g[target] -= scale * norm;
      }
    }
  }
  return loss * norm;
}

/// Mean over masked frames of the squared L2 error; 0 for an empty mask.
inline double cqt_mse_loss(const model::Mat& pred, const dsp::CqtMatrix& target, const MaskSpec& mask,
                           model::Mat* grad = nullptr, double scale = 1.0) {
  require(static_cast<std::size_t>(pred.rows()) == target.frames &&
              static_cast<std::size_t>(pred.cols()) == target.bins,
          "cqt_mse_loss: prediction (" + std::to_string(pred.rows()) + " x " + std::to_string(pred.cols()) +
              ") does not match target (" + std::to_string(target.frames) + " x " + std::to_string(target.bins) +
              ")",
          ErrorKind::shape);
  require(mask.total_frames == target.frames, "cqt_mse_loss: mask frame count mismatch", ErrorKind::shape);
  const std::size_t m = mask.count();
  if (m == 0) return 0.0;
  const double norm = 1.0 / static_cast<double>(m);
  double loss = 0.0;
  for (std::size_t t = 0; t < target.frames; ++t) {
    if (!mask.contains(t)) continue;
    for (std::size_t b = 0; b < target.bins; ++b) {
      const double diff = pred(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(b)) - target.at(t, b);
      loss += diff * diff;
      if (grad) (*grad)(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(b)) += scale * norm * 2.0 * diff;
    }
  }
  return loss * norm;
}

inline LossBreakdown combined_loss(const model::ForwardOutput& out, const tokenizer::TokenSequence& targets,
                                   const dsp::CqtMatrix& cqt, const MaskSpec& mask, const LossConfig& cfg) {
  require(cfg.alpha >= 0.0, "combined_loss: alpha must be non-negative");
  LossBreakdown b;
  b.rvq = rvq_nce_loss(LogitView::of(out), targets, mask);
  b.cqt = cqt_mse_loss(out.cqt_pred, cqt, mask);
  b.total = cfg.alpha * b.rvq + b.cqt;
  b.masked_frame_count = mask.count();
  return b;
}

/// Loss plus scale * gradient with respect to the forward outputs.
inline LossBreakdown combined_loss_with_grad(const model::ForwardOutput& out, const tokenizer::TokenSequence& targets,
                                             const dsp::CqtMatrix& cqt, const MaskSpec& mask, const LossConfig& cfg,
                                             model::OutputGrads& grads, double scale = 1.0) {
  require(cfg.alpha >= 0.0, "combined_loss: alpha must be non-negative");
  grads.d_logits.assign(out.rvq_logits.size(), 0.0);
  grads.d_cqt = model::Mat::Zero(out.cqt_pred.rows(), out.cqt_pred.cols());
  LossBreakdown b;
  b.rvq = rvq_nce_loss(LogitView::of(out), targets, mask, &grads.d_logits, scale * cfg.alpha);
  b.cqt = cqt_mse_loss(out.cqt_pred, cqt, mask, &grads.d_cqt, scale);
  b.total = cfg.alpha * b.rvq + b.cqt;
  b.masked_frame_count = mask.count();
  return b;
}

}  // namespace cmrt::losses
