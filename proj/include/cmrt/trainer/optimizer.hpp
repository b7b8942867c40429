#pragma once

#include <cmath>
#include <set>
#include <string>
#include <utility>

#include "cmrt/model/config.hpp"
#include "cmrt/tensor.hpp"
#include "cmrt/trainer/schedule.hpp"

namespace cmrt::trainer {

/// AdamW moments for the trainable subset only; frozen tensors have none.
struct OptimizerState {
  TensorMap first_moment;
  TensorMap second_moment;
  std::size_t step_count = 0;
};

inline bool is_trainable(const std::string& name, const std::set<model::ParamGroup>& groups) {
  return groups.count(model::group_of(name)) != 0;
}

inline OptimizerState init_optimizer(const TensorMap& params, const std::set<model::ParamGroup>& groups) {
  OptimizerState s;
  for (const auto& [name, t] : params) {
    if (!is_trainable(name, groups)) continue;
    s.first_moment.set(name, Tensor(t.shape, t.dtype));
    s.second_moment.set(name, Tensor(t.shape, t.dtype));
  }
  return s;
}

/// Global L2 norm over every tensor of `grads`.
inline double global_norm(const TensorMap& grads) {
  double sq = 0.0;
  for (const auto& [name, t] : grads) {
    const long bad = first_non_finite(t);
    if (bad >= 0) {
      throw Error(ErrorKind::numeric,
                  "non-finite gradient in tensor '" + name + "' at element " + std::to_string(bad));
    }
    for (double v : t.data) sq += v * v;
  }
  return std::sqrt(sq);
}

/// Scales all gradients jointly when their global norm exceeds clip_norm.
/// Returns the clipped gradients and the pre-clip norm.
inline std::pair<TensorMap, double> clip_gradients(TensorMap grads, double clip_norm) {
  require(clip_norm > 0.0, "clip_gradients: clip_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (auto& [_, t] : grads) {
      for (double& v : t.data) v *= scale;
    }
  }
  return {std::move(grads), norm};
}

/// Decoupled-weight-decay Adam with bias correction, applied to the tensors
/// present in `opt` (the trainable subset); all other parameters are left
/// untouched.
inline void optimizer_step(TensorMap& params, OptimizerState& opt, const TensorMap& grads, double lr,
                           const TrainStageConfig& cfg) {
  ++opt.step_count;
  const double t = static_cast<double>(opt.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, m] : opt.first_moment) {
    Tensor& p = params.at(name);
    const Tensor& g = grads.at(name);
    Tensor& v = opt.second_moment.at(name);
    require(p.shape == g.shape && p.shape == m.shape, "optimizer_step: shape mismatch for '" + name + "'",
            ErrorKind::shape);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data[i];
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.data[i]);
    }
    p.round_to_dtype();
  }
}

}  // namespace cmrt::trainer
