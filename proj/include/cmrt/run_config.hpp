#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmrt/config_file.hpp"
#include "cmrt/dsp/synth.hpp"
#include "cmrt/model/config.hpp"
#include "cmrt/probe/probe.hpp"
#include "cmrt/trainer/trainer.hpp"

/// Mapping between declarative config keys and the library's config structs.
/// Every reader takes defaults and returns them overridden by present keys.
namespace cmrt::run {

namespace detail {

inline std::string key(const std::string& section, const std::string& name) {
  return section.empty() ? name : section + "." + name;
}

inline std::size_t size_key(const ConfigFile& cf, const std::string& k, std::size_t fallback) {
  const long long v = cf.integer(k, static_cast<long long>(fallback));
  require(v >= 0, "config key '" + k + "' must be non-negative", ErrorKind::config);
  return static_cast<std::size_t>(v);
}

// Digits only: stoull alone would wrap "-3" around.
inline std::optional<std::uint64_t> parse_seed(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  try {
    return std::stoull(s);
  } catch (const std::out_of_range&) {
    return std::nullopt;
  }
}

inline std::uint64_t seed_key(const ConfigFile& cf, const std::string& k, std::uint64_t fallback) {
  if (!cf.has(k)) return fallback;
  const auto v = parse_seed(cf.str(k, ""));
  if (!v) throw Error(ErrorKind::config, "config key '" + k + "' must be an unsigned integer");
  return *v;
}

inline std::vector<double> real_list(const ConfigFile& cf, const std::string& k) {
  std::vector<double> out;
  for (const auto& s : cf.list(k)) out.push_back(csv::to_double(s, "config key '" + k + "'"));
  return out;
}

}  // namespace detail

/// Seed used when neither a flag nor a key names one: $CMRT_SEED, else 0.
inline std::uint64_t env_seed() {
  const char* s = std::getenv("CMRT_SEED");
  if (s == nullptr || *s == '\0') return 0;
  if (const auto v = detail::parse_seed(s)) return *v;
  throw Error(ErrorKind::config, std::string("CMRT_SEED must be an unsigned integer, got '") + s + "'");
}

// ---------------------------------------------------------------------------
// Model

/// conv = "channels:kernel:stride, ..." ; other keys mirror ModelConfig.
inline model::ModelConfig model_config(const ConfigFile& cf, const std::string& sec, model::ModelConfig c) {
  using detail::key;
  using detail::size_key;
  c.sample_rate = static_cast<int>(cf.integer(key(sec, "sample_rate"), c.sample_rate));
  c.frame_stride = size_key(cf, key(sec, "frame_stride"), c.frame_stride);
  if (cf.has(key(sec, "conv"))) {
    c.conv.clear();
    for (const auto& item : cf.list(key(sec, "conv"))) {
      const auto parts = csv::split_line(item, ':');
      require(parts.size() == 3, "config key '" + key(sec, "conv") + "': expected channels:kernel:stride, got '" +
                                     item + "'",
              ErrorKind::config);
      auto num = [&](const std::string& s) {
        const double v = csv::to_double(s, "config key '" + key(sec, "conv") + "'");
        require(v >= 1 && v == static_cast<double>(static_cast<std::size_t>(v)),
                "config key '" + key(sec, "conv") + "': entries must be positive integers", ErrorKind::config);
        return static_cast<std::size_t>(v);
      };
      c.conv.push_back({num(parts[0]), num(parts[1]), num(parts[2])});
    }
  }
  c.d_model = size_key(cf, key(sec, "d_model"), c.d_model);
  c.n_layers = size_key(cf, key(sec, "n_layers"), c.n_layers);
  c.n_heads = size_key(cf, key(sec, "n_heads"), c.n_heads);
  c.ffn_dim = size_key(cf, key(sec, "ffn_dim"), c.ffn_dim);
  c.d_embed = size_key(cf, key(sec, "d_embed"), c.d_embed);
  c.K = size_key(cf, key(sec, "K"), c.K);
  c.C = size_key(cf, key(sec, "C"), c.C);
  c.cqt_bins = size_key(cf, key(sec, "cqt_bins"), c.cqt_bins);
  c.tau = cf.real(key(sec, "tau"), c.tau);
  c.mask_start_prob = cf.real(key(sec, "mask_start_prob"), c.mask_start_prob);
  c.mask_span = size_key(cf, key(sec, "mask_span"), c.mask_span);
  c.max_frames = size_key(cf, key(sec, "max_frames"), c.max_frames);
  c.rng_seed = detail::seed_key(cf, key(sec, "seed"), c.rng_seed);
  model::validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Teachers

/// Frozen target generators are fully determined by these settings plus the
/// model's (K, C, cqt_bins, frame grid); they travel with checkpoints.
struct TeacherSettings {
  std::size_t codec_dim = 16;
  std::uint64_t codec_seed = 0;
  double cqt_f_min = 32.70;
  int cqt_bins_per_octave = 12;

  friend bool operator==(const TeacherSettings&, const TeacherSettings&) = default;
};

inline void to_json(nlohmann::json& j, const TeacherSettings& t) {
  j = {{"codec_dim", t.codec_dim},
       {"codec_seed", t.codec_seed},
       {"cqt_f_min", t.cqt_f_min},
       {"cqt_bins_per_octave", t.cqt_bins_per_octave}};
}

inline void from_json(const nlohmann::json& j, TeacherSettings& t) {
  j.at("codec_dim").get_to(t.codec_dim);
  j.at("codec_seed").get_to(t.codec_seed);
  j.at("cqt_f_min").get_to(t.cqt_f_min);
  j.at("cqt_bins_per_octave").get_to(t.cqt_bins_per_octave);
}

inline TeacherSettings teacher_settings(const ConfigFile& cf, const std::string& sec, TeacherSettings t) {
  using detail::key;
  t.codec_dim = detail::size_key(cf, key(sec, "codec_dim"), t.codec_dim);
  t.codec_seed = detail::seed_key(cf, key(sec, "codec_seed"), t.codec_seed);
  t.cqt_f_min = cf.real(key(sec, "cqt_f_min"), t.cqt_f_min);
  t.cqt_bins_per_octave = static_cast<int>(cf.integer(key(sec, "cqt_bins_per_octave"), t.cqt_bins_per_octave));
  require(t.codec_dim >= 1, "teacher codec_dim must be >= 1", ErrorKind::config);
  require(t.cqt_f_min > 0.0 && t.cqt_bins_per_octave >= 1, "teacher CQT settings must be positive", ErrorKind::config);
  return t;
}

inline trainer::Teachers make_teachers(const TeacherSettings& t, const model::ModelConfig& m) {
  dsp::CqtSettings cqt;
  cqt.f_min = t.cqt_f_min;
  cqt.bins_per_octave = t.cqt_bins_per_octave;
  cqt.n_bins = m.cqt_bins;
  cqt.frame_rate = static_cast<double>(m.sample_rate) / static_cast<double>(m.frame_stride);
  return {tokenizer::RvqCodec(m.K, m.C, t.codec_dim, t.codec_seed), cqt};
}

// ---------------------------------------------------------------------------
// Training stages

inline const char* schedule_name(trainer::ScheduleKind k) {
  return k == trainer::ScheduleKind::constant ? "constant" : "warmup_cosine";
}

inline trainer::ScheduleKind parse_schedule(const std::string& s) {
  if (s == "warmup_cosine") return trainer::ScheduleKind::warmup_cosine;
  if (s == "constant") return trainer::ScheduleKind::constant;
  throw Error(ErrorKind::config, "unknown schedule '" + s + "' (expected warmup_cosine or constant)");
}

/// groups = "all" or a list of parameter group names.
inline trainer::TrainStageConfig stage_config(const ConfigFile& cf, const std::string& sec,
                                              trainer::TrainStageConfig c) {
  using detail::key;
  using detail::size_key;
  c.label = cf.str(key(sec, "label"), c.label);
  c.steps = size_key(cf, key(sec, "steps"), c.steps);
  c.warmup_fraction = cf.real(key(sec, "warmup_fraction"), c.warmup_fraction);
  c.lr_max = cf.real(key(sec, "lr_max"), c.lr_max);
  c.lr_min = cf.real(key(sec, "lr_min"), c.lr_min);
  if (cf.has(key(sec, "schedule"))) c.schedule = parse_schedule(cf.str(key(sec, "schedule"), ""));
  c.beta1 = cf.real(key(sec, "beta1"), c.beta1);
  c.beta2 = cf.real(key(sec, "beta2"), c.beta2);
  c.eps = cf.real(key(sec, "eps"), c.eps);
  c.weight_decay = cf.real(key(sec, "weight_decay"), c.weight_decay);
  c.clip_norm = cf.real(key(sec, "clip_norm"), c.clip_norm);
  c.batch_clips = size_key(cf, key(sec, "batch_clips"), c.batch_clips);
  c.accum_steps = size_key(cf, key(sec, "accum_steps"), c.accum_steps);
  if (cf.has(key(sec, "groups"))) {
    c.trainable_groups.clear();
    for (const auto& g : cf.list(key(sec, "groups"))) {
      if (g == "all") {
        c.trainable_groups = {model::ParamGroup::conv, model::ParamGroup::codeword_emb, model::ParamGroup::transformer,
                              model::ParamGroup::heads, model::ParamGroup::mask_emb};
      } else {
        c.trainable_groups.insert(model::parse_group(g));
      }
    }
  }
  c.replay_fraction = cf.real(key(sec, "replay_fraction"), c.replay_fraction);
  c.mixup_prob = cf.real(key(sec, "mixup_prob"), c.mixup_prob);
  if (cf.has(key(sec, "mixup_gain"))) c.mixup_gain = cf.real(key(sec, "mixup_gain"), 0.0);
  c.clip_seconds = cf.real(key(sec, "clip_seconds"), c.clip_seconds);
  c.alpha = cf.real(key(sec, "alpha"), c.alpha);
  c.eval_every = size_key(cf, key(sec, "eval_every"), c.eval_every);
  c.carry_moments = cf.boolean(key(sec, "carry_moments"), c.carry_moments);
  c.rng_seed = detail::seed_key(cf, key(sec, "seed"), c.rng_seed);
  trainer::validate(c);
  return c;
}

inline nlohmann::json to_json(const trainer::TrainStageConfig& c) {
  nlohmann::json groups = nlohmann::json::array();
  for (auto g : c.trainable_groups) groups.push_back(model::group_name(g));
  nlohmann::json j = {{"label", c.label},
                      {"steps", c.steps},
                      {"warmup_fraction", c.warmup_fraction},
                      {"lr_max", c.lr_max},
                      {"lr_min", c.lr_min},
                      {"schedule", schedule_name(c.schedule)},
                      {"beta1", c.beta1},
                      {"beta2", c.beta2},
                      {"eps", c.eps},
                      {"weight_decay", c.weight_decay},
                      {"clip_norm", c.clip_norm},
                      {"batch_clips", c.batch_clips},
                      {"accum_steps", c.accum_steps},
                      {"groups", groups},
                      {"replay_fraction", c.replay_fraction},
                      {"mixup_prob", c.mixup_prob},
                      {"clip_seconds", c.clip_seconds},
                      {"alpha", c.alpha},
                      {"eval_every", c.eval_every},
                      {"carry_moments", c.carry_moments},
                      {"seed", c.rng_seed}};
  if (c.mixup_gain) j["mixup_gain"] = *c.mixup_gain;
  return j;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

/// A synthetic culture plus how many clips to render and how to split them.
struct CorpusPlan {
  dsp::SynthCultureSpec culture;
  std::size_t clips = 20;
  double duration = 2.0;
  double test_fraction = 0.25;
  double valid_fraction = 0.0;
};

/// pitches = "hz, hz, ..." or scale_reference + scale_semitones.
inline CorpusPlan corpus_plan(const ConfigFile& cf, const std::string& sec, CorpusPlan p) {
  using detail::key;
  auto& s = p.culture;
  s.sample_rate = static_cast<int>(cf.integer(key(sec, "sample_rate"), s.sample_rate));
  if (cf.has(key(sec, "pitches"))) s.pitch_set = detail::real_list(cf, key(sec, "pitches"));
  if (cf.has(key(sec, "scale_reference")) || cf.has(key(sec, "scale_semitones"))) {
    require(!cf.has(key(sec, "pitches")), "give either pitches or scale_reference/scale_semitones, not both",
            ErrorKind::config);
    std::vector<int> semis;
    for (double v : detail::real_list(cf, key(sec, "scale_semitones"))) {
      require(v == static_cast<double>(static_cast<int>(v)), "scale_semitones must be integers", ErrorKind::config);
      semis.push_back(static_cast<int>(v));
    }
    s.pitch_set = dsp::scale_from_semitones(cf.real(key(sec, "scale_reference"), 220.0), semis);
  }
  s.timbre_seed = detail::seed_key(cf, key(sec, "timbre_seed"), s.timbre_seed);
  s.tempo_range.first = cf.real(key(sec, "tempo_min"), s.tempo_range.first);
  s.tempo_range.second = cf.real(key(sec, "tempo_max"), s.tempo_range.second);
  s.rng_seed = detail::seed_key(cf, key(sec, "seed"), s.rng_seed);
  s.f_min = cf.real(key(sec, "f_min"), s.f_min);
  s.subset_size = detail::size_key(cf, key(sec, "subset_size"), s.subset_size);
  p.clips = detail::size_key(cf, key(sec, "clips"), p.clips);
  p.duration = cf.real(key(sec, "duration"), p.duration);
  p.test_fraction = cf.real(key(sec, "test_fraction"), p.test_fraction);
  p.valid_fraction = cf.real(key(sec, "valid_fraction"), p.valid_fraction);
  dsp::validate(s);
  require(p.clips >= 1 && p.duration > 0.0, "corpus needs clips >= 1 and duration > 0", ErrorKind::config);
  require(p.test_fraction >= 0.0 && p.valid_fraction >= 0.0 && p.test_fraction + p.valid_fraction < 1.0,
          "test_fraction + valid_fraction must be in [0, 1)", ErrorKind::config);
  return p;
}

inline nlohmann::json to_json(const CorpusPlan& p) {
  const auto& s = p.culture;
  return {{"pitches", s.pitch_set},         {"timbre_seed", s.timbre_seed}, {"tempo_min", s.tempo_range.first},
          {"tempo_max", s.tempo_range.second}, {"seed", s.rng_seed},          {"sample_rate", s.sample_rate},
          {"f_min", s.f_min},               {"subset_size", s.subset_size}, {"clips", p.clips},
          {"duration", p.duration},         {"test_fraction", p.test_fraction}, {"valid_fraction", p.valid_fraction}};
}

// ---------------------------------------------------------------------------
// Probing

/// layer = "last", "weighted" or a layer index.
inline probe::FeatureLayer parse_feature_layer(const std::string& s) {
  if (s == "last") return probe::LastLayer{};
  if (s == "weighted") return probe::LearnedWeighted{};
  const double v = csv::to_double(s, "feature layer");
  require(v >= 0 && v == static_cast<double>(static_cast<std::size_t>(v)),
          "feature layer must be last, weighted or a non-negative index", ErrorKind::config);
  return probe::LayerIndex{static_cast<std::size_t>(v)};
}

inline std::string feature_layer_name(const probe::FeatureLayer& l) {
  if (std::holds_alternative<probe::LastLayer>(l)) return "last";
  if (std::holds_alternative<probe::LearnedWeighted>(l)) return "weighted";
  return std::to_string(std::get<probe::LayerIndex>(l).index);
}

inline probe::ProbeConfig probe_config(const ConfigFile& cf, const std::string& sec, probe::ProbeConfig c) {
  using detail::key;
  using detail::size_key;
  c.hidden_dim = size_key(cf, key(sec, "hidden_dim"), c.hidden_dim);
  if (cf.has(key(sec, "layer"))) c.feature_layer = parse_feature_layer(cf.str(key(sec, "layer"), ""));
  c.epochs = size_key(cf, key(sec, "epochs"), c.epochs);
  c.lr = cf.real(key(sec, "lr"), c.lr);
  c.batch = size_key(cf, key(sec, "batch"), c.batch);
  c.weight_decay = cf.real(key(sec, "weight_decay"), c.weight_decay);
  c.window_seconds = cf.real(key(sec, "window_seconds"), c.window_seconds);
  c.max_duration = cf.real(key(sec, "max_duration"), c.max_duration);
  c.rng_seed = detail::seed_key(cf, key(sec, "seed"), c.rng_seed);
  require(c.hidden_dim >= 1 && c.batch >= 1, "probe hidden_dim and batch must be >= 1", ErrorKind::config);
  require(c.lr > 0.0 && c.weight_decay >= 0.0, "probe lr must be positive and weight_decay non-negative",
          ErrorKind::config);
  require(c.window_seconds > 0.0 && c.max_duration >= 0.0, "probe window_seconds must be positive",
          ErrorKind::config);
  return c;
}

inline nlohmann::json to_json(const probe::ProbeConfig& c) {
  return {{"hidden_dim", c.hidden_dim}, {"layer", feature_layer_name(c.feature_layer)},
          {"epochs", c.epochs},         {"lr", c.lr},
          {"batch", c.batch},           {"weight_decay", c.weight_decay},
          {"window_seconds", c.window_seconds}, {"max_duration", c.max_duration},
          {"seed", c.rng_seed}};
}

}  // namespace cmrt::run
