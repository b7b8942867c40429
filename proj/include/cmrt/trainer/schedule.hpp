#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <set>
#include <string>

#include "cmrt/error.hpp"
#include "cmrt/model/config.hpp"

namespace cmrt::trainer {

enum class ScheduleKind {
  warmup_cosine,  // linear warm-up to lr_max, cosine decay to lr_min
  constant,       // lr_max throughout ("no re-warm" ablation)
};

/// One stage of continual pre-training. Defaults are the first-stage values
/// (10% warm-up, 5e-4 -> 5e-5, betas 0.9/0.999, eps 1e-5, clip 1.0) with a
/// desk-scale step budget.
struct TrainStageConfig {
  std::string label = "stage1";
  std::size_t steps = 100;
  double warmup_fraction = 0.10;
  double lr_max = 5e-4;
  double lr_min = 5e-5;
  ScheduleKind schedule = ScheduleKind::warmup_cosine;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::size_t batch_clips = 4;
  std::size_t accum_steps = 8;
  std::set<model::ParamGroup> trainable_groups{model::ParamGroup::conv, model::ParamGroup::codeword_emb};
  double replay_fraction = 0.2;
  double mixup_prob = 0.5;
  std::optional<double> mixup_gain;  // drawn per mixed clip when unset
  double clip_seconds = 5.0;
  double alpha = 10.0;
  std::size_t eval_every = 0;  // 0 disables periodic held-out evaluation
  bool carry_moments = false;  // reuse optimizer moments from a previous stage
  std::uint64_t rng_seed = 0;
};

/// Second-stage defaults: full unfreezing, 1% warm-up, 5e-5 -> 5e-6, beta2 0.95,
/// no replay, 6.5x the first stage's step budget.
inline TrainStageConfig stage2_defaults(const TrainStageConfig& stage1) {
  TrainStageConfig s = stage1;
  s.label = "stage2";
  s.steps = static_cast<std::size_t>(std::llround(stage1.steps * 6.5));
  s.warmup_fraction = 0.01;
  s.lr_max = 5e-5;
  s.lr_min = 5e-6;
  s.beta2 = 0.95;
  s.trainable_groups = {model::ParamGroup::conv, model::ParamGroup::codeword_emb, model::ParamGroup::transformer,
                        model::ParamGroup::heads, model::ParamGroup::mask_emb};
  s.replay_fraction = 0.0;
  return s;
}

inline void validate(const TrainStageConfig& c) {
  auto check = [&](bool ok, const std::string& what) {
    require(ok, "stage '" + c.label + "': " + what, ErrorKind::config);
  };
  check(c.steps >= 1, "steps must be >= 1");
  check(c.warmup_fraction > 0.0 && c.warmup_fraction < 1.0, "warmup_fraction must be in (0, 1)");
  check(c.lr_min >= 0.0 && c.lr_min <= c.lr_max, "require 0 <= lr_min <= lr_max");
  check(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0, "betas must be in [0, 1)");
  check(c.eps > 0.0, "eps must be positive");
  check(c.weight_decay >= 0.0, "weight_decay must be non-negative");
  check(c.clip_norm > 0.0, "clip_norm must be positive");
  check(c.batch_clips >= 1 && c.accum_steps >= 1, "batch_clips and accum_steps must be >= 1");
  check(c.replay_fraction >= 0.0 && c.replay_fraction <= 1.0, "replay_fraction must be in [0, 1]");
  check(c.mixup_prob >= 0.0 && c.mixup_prob <= 1.0, "mixup_prob must be in [0, 1]");
  check(c.mixup_prob == 0.0 || c.batch_clips >= 2, "mixup needs batch_clips >= 2");
  check(c.clip_seconds > 0.0, "clip_seconds must be positive");
  check(c.alpha >= 0.0, "alpha must be non-negative");
}

inline std::size_t warmup_steps(const TrainStageConfig& c) {
  const auto w = static_cast<std::size_t>(std::llround(c.warmup_fraction * static_cast<double>(c.steps)));
  return std::max<std::size_t>(1, w);
}

/// Linear warm-up reaching lr_max on the last warm-up step, then cosine decay
/// whose progress runs from 0 at the first decay step to exactly 1 at the
/// final step, so the final learning rate is lr_min.
inline double lr_at_step(std::size_t step, const TrainStageConfig& c) {
  require(step < c.steps, "lr_at_step: step " + std::to_string(step) + " outside [0, " + std::to_string(c.steps) + ")");
  if (c.schedule == ScheduleKind::constant) return c.lr_max;
  const std::size_t w = warmup_steps(c);
  if (step < w) return c.lr_max * static_cast<double>(step + 1) / static_cast<double>(w);
  const std::size_t span = c.steps - w - 1;
  const double progress = span == 0 ? 1.0 : static_cast<double>(step - w) / static_cast<double>(span);
  return c.lr_min + 0.5 * (c.lr_max - c.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace cmrt::trainer
