#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cmrt/checkpoint.hpp"
#include "cmrt/dsp/cqt.hpp"
#include "cmrt/dsp/transforms.hpp"
#include "cmrt/losses.hpp"
#include "cmrt/model/model.hpp"
#include "cmrt/tokenizer.hpp"
#include "cmrt/trainer/mix.hpp"
#include "cmrt/trainer/optimizer.hpp"
#include "cmrt/trainer/schedule.hpp"

namespace cmrt::trainer {

using Corpora = std::map<std::string, std::vector<dsp::AudioBuffer>>;

/// Frozen target generators: the RVQ codec and the CQT settings.
struct Teachers {
  tokenizer::RvqCodec codec;
  dsp::CqtSettings cqt;
};

struct LogRow {
  std::string stage;
  std::size_t step = 0;
  double lr = 0.0;
  double rvq = 0.0;
  double cqt = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  std::size_t masked_frames = 0;
};

struct EvalRow {
  std::string stage;
  std::size_t step = 0;
  double total = 0.0;
};

struct StageResult {
  ckpt::Checkpoint checkpoint;
  OptimizerState optimizer;
  std::vector<LogRow> log;
  std::vector<EvalRow> eval_log;
  std::size_t empty_mask_events = 0;
};

inline ckpt::Checkpoint make_checkpoint(model::ModelParams params, const model::ModelConfig& cfg, std::uint64_t step,
                                        std::string label, std::vector<std::uint64_t> seeds) {
  ckpt::Checkpoint ck;
  ck.params = std::move(params);
  ck.config_digest = model::config_digest(cfg);
  ck.step = step;
  ck.stage_label = std::move(label);
  ck.seed_record = std::move(seeds);
  ck.extra["model_config"] = cfg;
  return ck;
}

inline model::ModelConfig config_of(const ckpt::Checkpoint& ck) {
  require(ck.extra.contains("model_config"), "checkpoint has no model_config sidecar", ErrorKind::format);
  return ck.extra.at("model_config").get<model::ModelConfig>();
}

/// Computes tokenizer and CQT targets on the model's frame grid.
class TargetBuilder {
 public:
  TargetBuilder(const Teachers& teachers, const model::ModelConfig& mcfg)
      : codec_(teachers.codec), front_end_(teachers.codec.D(), mcfg.frame_stride), cqt_(mcfg.sample_rate, teachers.cqt) {
    require(codec_.K() == mcfg.K && codec_.C() == mcfg.C,
            "teacher codec (K=" + std::to_string(codec_.K()) + ", C=" + std::to_string(codec_.C()) +
                ") does not match model (K=" + std::to_string(mcfg.K) + ", C=" + std::to_string(mcfg.C) + ")",
            ErrorKind::config);
    require(teachers.cqt.n_bins == mcfg.cqt_bins, "teacher CQT bins do not match model cqt_bins", ErrorKind::config);
    require(cqt_.hop() == mcfg.frame_stride,
            "teacher/model frame misalignment: CQT hop " + std::to_string(cqt_.hop()) + " != model stride " +
                std::to_string(mcfg.frame_stride),
            ErrorKind::config);
  }

  std::pair<tokenizer::TokenSequence, dsp::CqtMatrix> operator()(const dsp::AudioBuffer& clip) {
    auto tokens = tokenizer::tokenize(codec_, front_end_(clip));
    auto cqt = cqt_(clip);
    require(tokens.frames == cqt.frames, "teacher/model frame misalignment: " + std::to_string(tokens.frames) +
                                             " token frames vs " + std::to_string(cqt.frames) + " CQT frames",
            ErrorKind::shape);
    return {std::move(tokens), std::move(cqt)};
  }

 private:
  tokenizer::RvqCodec codec_;
  tokenizer::FeatureFrontEnd front_end_;
  dsp::CqtTransform cqt_;
};

/// Masked-prediction loss averaged over clips, with a fixed mask per clip
/// index so different models are scored on identical masks.
inline losses::LossBreakdown evaluate_loss(const model::ModelParams& params, const model::ModelConfig& mcfg,
                                           const std::vector<dsp::AudioBuffer>& clips, const Teachers& teachers,
                                           double alpha, std::uint64_t mask_seed) {
  require(!clips.empty(), "evaluate_loss: no clips");
  TargetBuilder targets(teachers, mcfg);
  losses::LossBreakdown acc;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto [tokens, cqt] = targets(clips[i]);
    const auto [out, mask] = model::full_forward(params, mcfg, clips[i], derive_seed(mask_seed, i));
    require(out.frames == tokens.frames, "teacher/model frame misalignment: model " + std::to_string(out.frames) +
                                             " frames vs teacher " + std::to_string(tokens.frames),
            ErrorKind::shape);
    const auto b = losses::combined_loss(out, tokens, cqt, mask, losses::LossConfig{alpha});
    acc.rvq += b.rvq;
    acc.cqt += b.cqt;
    acc.total += b.total;
    acc.masked_frame_count += b.masked_frame_count;
  }
  const double n = static_cast<double>(clips.size());
  acc.rvq /= n;
  acc.cqt /= n;
  acc.total /= n;
  return acc;
}

/// Optional held-out set scored every `eval_every` steps.
struct EvalSet {
  std::vector<dsp::AudioBuffer> clips;
  std::uint64_t mask_seed = 0;
};

/// Runs one stage: steps x accum_steps micro-batches of batch_clips clips.
/// Gradients are averaged over clips and micro-batches, clipped jointly over
/// the trainable tensors, and applied with AdamW at lr_at_step.
inline StageResult run_stage(const ckpt::Checkpoint& init, const model::ModelConfig& mcfg,
                             const TrainStageConfig& cfg, const DataMixSpec& mix, const Corpora& corpora,
                             const Teachers& teachers, const EvalSet* eval = nullptr,
                             const OptimizerState* carried = nullptr) {
  validate(cfg);
  model::validate(mcfg);
  require(init.config_digest == model::config_digest(mcfg),
          "run_stage: checkpoint config digest does not match the model config", ErrorKind::config);
  require(std::abs(mix.replay_fraction - cfg.replay_fraction) < 1e-12,
          "run_stage: mix replay_fraction disagrees with stage config", ErrorKind::config);
  model::validate_params(init.params, mcfg);
  require(!cfg.trainable_groups.empty(), "run_stage: no trainable groups", ErrorKind::config);

  std::map<std::string, std::size_t> sizes;
  for (const auto& [id, clips] : corpora) sizes[id] = clips.size();
  const std::size_t per_step = cfg.batch_clips * cfg.accum_steps;
  const auto schedule = build_training_mix(mix, cfg.steps * per_step, derive_seed(cfg.rng_seed, 1), sizes);

  TargetBuilder targets(teachers, mcfg);
  StageResult res;
  model::ModelParams params = init.params;
  res.optimizer = init_optimizer(params, cfg.trainable_groups);
  if (cfg.carry_moments && carried) {
    // Groups newly unfrozen in this stage start from zero moments.
    for (const auto& [name, m] : carried->first_moment) {
      if (!res.optimizer.first_moment.contains(name)) continue;
      res.optimizer.first_moment.at(name) = m;
      res.optimizer.second_moment.at(name) = carried->second_moment.at(name);
    }
    res.optimizer.step_count = carried->step_count;
  }
  Rng rng(derive_seed(cfg.rng_seed, 2));
  const losses::LossConfig loss_cfg{cfg.alpha};
  const double grad_scale = 1.0 / static_cast<double>(per_step);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double lr = lr_at_step(step, cfg);
    TensorMap grads = params.zeros_like();
    LogRow row{cfg.label, step, lr};
    for (std::size_t a = 0; a < cfg.accum_steps; ++a) {
      std::vector<dsp::AudioBuffer> batch;
      for (std::size_t b = 0; b < cfg.batch_clips; ++b) {
        const auto& slot = schedule[(step * cfg.accum_steps + a) * cfg.batch_clips + b];
        const dsp::AudioBuffer& src = corpora.at(slot.corpus)[slot.clip];
        const double slack = std::max(0.0, src.duration() - cfg.clip_seconds);
        const double start = std::floor(rng.uniform() * slack * src.sample_rate) / src.sample_rate;
        batch.push_back(dsp::crop_segment(src, start, cfg.clip_seconds, dsp::PadPolicy::zero_pad));
      }
      batch = dsp::mixup_batch(batch, cfg.mixup_prob, cfg.mixup_gain, rng.next_u64());
      for (const auto& clip : batch) {
        const auto [tokens, cqt] = targets(clip);
        const std::size_t frames = model::model_frame_count(mcfg, clip.size());
        require(frames == tokens.frames, "teacher/model frame misalignment: model " + std::to_string(frames) +
                                             " frames vs teacher " + std::to_string(tokens.frames),
                ErrorKind::shape);
        const auto mask = model::draw_mask(mcfg, frames, rng.next_u64());
        model::ForwardTrace trace;
        const auto out = model::forward_masked(params, mcfg, clip, mask, trace);
        model::OutputGrads dout;
        const auto loss = losses::combined_loss_with_grad(out, tokens, cqt, mask, loss_cfg, dout, grad_scale);
        if (!std::isfinite(loss.total)) {
          throw Error(ErrorKind::numeric, "run_stage '" + cfg.label + "': non-finite loss at step " +
                                              std::to_string(step));
        }
        if (loss.masked_frame_count == 0) {
          ++res.empty_mask_events;
        } else {
          model::backward(params, mcfg, trace, out, dout, grads);
        }
        row.rvq += loss.rvq * grad_scale;
        row.cqt += loss.cqt * grad_scale;
        row.total += loss.total * grad_scale;
        row.masked_frames += loss.masked_frame_count;
      }
    }
    TensorMap trainable;
    for (const auto& [name, _] : res.optimizer.first_moment) trainable.set(name, std::move(grads.at(name)));
    auto [clipped, norm] = clip_gradients(std::move(trainable), cfg.clip_norm);
    row.grad_norm = norm;
    optimizer_step(params, res.optimizer, clipped, lr, cfg);
    res.log.push_back(row);

    if (eval && cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)) {
      const auto b = evaluate_loss(params, mcfg, eval->clips, teachers, cfg.alpha, eval->mask_seed);
      res.eval_log.push_back({cfg.label, step + 1, b.total});
    }
  }

  std::vector<std::uint64_t> seeds = init.seed_record;
  seeds.push_back(cfg.rng_seed);
  res.checkpoint = make_checkpoint(std::move(params), mcfg, init.step + cfg.steps, cfg.label, std::move(seeds));
  return res;
}

struct TwoStageResult {
  StageResult stage1;
  StageResult stage2;
};

/// Stage 1 (partial unfreezing, replay) followed by stage 2 (full
/// adaptation); each stage re-warms its own learning-rate schedule.
inline TwoStageResult run_two_stage(const ckpt::Checkpoint& init, const model::ModelConfig& mcfg,
                                    const TrainStageConfig& stage1, const TrainStageConfig& stage2,
                                    const DataMixSpec& mix1, const DataMixSpec& mix2, const Corpora& corpora,
                                    const Teachers& teachers, const EvalSet* eval = nullptr) {
  TwoStageResult r;
  r.stage1 = run_stage(init, mcfg, stage1, mix1, corpora, teachers, eval);
  r.stage2 = run_stage(r.stage1.checkpoint, mcfg, stage2, mix2, corpora, teachers, eval, &r.stage1.optimizer);
  return r;
}

inline void write_log_csv(std::ostream& os, const std::vector<LogRow>& rows) {
  os.precision(17);
  os << "stage,step,lr,rvq,cqt,total,grad_norm,masked_frames\n";
  for (const auto& r : rows) {
    os << r.stage << ',' << r.step << ',' << r.lr << ',' << r.rvq << ',' << r.cqt << ',' << r.total << ','
       << r.grad_norm << ',' << r.masked_frames << '\n';
  }
}

inline void write_eval_csv(std::ostream& os, const std::vector<EvalRow>& rows) {
  os.precision(17);
  os << "stage,step,eval_total\n";
  for (const auto& r : rows) os << r.stage << ',' << r.step << ',' << r.total << '\n';
}

}  // namespace cmrt::trainer
