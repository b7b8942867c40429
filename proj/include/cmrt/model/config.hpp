#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmrt/digest.hpp"
#include "cmrt/dsp/cqt.hpp"
#include "cmrt/error.hpp"
#include "json.hpp"

namespace cmrt::model {

struct ConvSpec {
  std::size_t channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Student architecture. Desk-scale defaults; the 24 kHz / 320-sample grid
/// gives 75 frames per second.
struct ModelConfig {
  int sample_rate = 24000;
  std::size_t frame_stride = 320;
  std::vector<ConvSpec> conv{{16, 10, 5}, {16, 8, 4}, {16, 8, 4}, {32, 4, 2}, {32, 4, 2}};
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t d_embed = 16;  // codeword embedding space of the RVQ head
  std::size_t K = 2;
  std::size_t C = 32;
  std::size_t cqt_bins = 84;
  double tau = 0.1;
  double mask_start_prob = 0.08;
  std::size_t mask_span = 10;
  std::size_t max_frames = 512;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& c) {
  auto check = [](bool ok, const std::string& what) { require(ok, "model config: " + what, ErrorKind::config); };
  check(c.sample_rate > 0, "sample_rate must be positive");
  check(!c.conv.empty(), "at least one conv layer required");
  std::size_t prod = 1;
  for (const auto& l : c.conv) {
    check(l.channels >= 1 && l.stride >= 1, "conv channels and stride must be >= 1");
    check(l.kernel >= l.stride, "conv kernel must be >= stride");
    prod *= l.stride;
  }
  check(prod == c.frame_stride, "product of conv strides (" + std::to_string(prod) + ") != frame_stride (" +
                                    std::to_string(c.frame_stride) + ")");
  check(c.d_model >= 1 && c.n_heads >= 1 && c.d_model % c.n_heads == 0, "d_model must be divisible by n_heads");
  check(c.ffn_dim >= 1 && c.d_embed >= 1, "ffn_dim and d_embed must be >= 1");
  check(c.K >= 1 && c.C >= 1 && c.cqt_bins >= 1, "K, C and cqt_bins must be >= 1");
  check(c.tau > 0.0, "tau must be positive");
  check(c.mask_start_prob >= 0.0 && c.mask_start_prob <= 1.0, "mask_start_prob must be in [0, 1]");
  check(c.max_frames >= 1, "max_frames must be >= 1");
}

inline void to_json(nlohmann::json& j, const ConvSpec& s) { j = {s.channels, s.kernel, s.stride}; }
inline void from_json(const nlohmann::json& j, ConvSpec& s) {
  s.channels = j.at(0).get<std::size_t>();
  s.kernel = j.at(1).get<std::size_t>();
  s.stride = j.at(2).get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"sample_rate", c.sample_rate}, {"frame_stride", c.frame_stride},
                     {"conv", c.conv},                {"d_model", c.d_model},
                     {"n_layers", c.n_layers},        {"n_heads", c.n_heads},
                     {"ffn_dim", c.ffn_dim},          {"d_embed", c.d_embed},
                     {"K", c.K},                      {"C", c.C},
                     {"cqt_bins", c.cqt_bins},        {"tau", c.tau},
                     {"mask_start_prob", c.mask_start_prob}, {"mask_span", c.mask_span},
                     {"max_frames", c.max_frames},    {"rng_seed", c.rng_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.sample_rate = j.value("sample_rate", d.sample_rate);
  c.frame_stride = j.value("frame_stride", d.frame_stride);
  c.conv = j.contains("conv") ? j.at("conv").get<std::vector<ConvSpec>>() : d.conv;
  c.d_model = j.value("d_model", d.d_model);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.d_embed = j.value("d_embed", d.d_embed);
  c.K = j.value("K", d.K);
  c.C = j.value("C", d.C);
  c.cqt_bins = j.value("cqt_bins", d.cqt_bins);
  c.tau = j.value("tau", d.tau);
  c.mask_start_prob = j.value("mask_start_prob", d.mask_start_prob);
  c.mask_span = j.value("mask_span", d.mask_span);
  c.max_frames = j.value("max_frames", d.max_frames);
  c.rng_seed = j.value("rng_seed", d.rng_seed);
}

/// Digest of the architecture-defining fields. rng_seed only affects
/// initialization, so models that differ only in seed stay merge-compatible.
inline std::string config_digest(const ModelConfig& c) {
  nlohmann::json j = c;
  j.erase("rng_seed");
  j.erase("mask_start_prob");
  j.erase("mask_span");
  return sha256_hex(j.dump());
}

/// Trainable parameter groups used for staged freezing.
enum class ParamGroup { conv, codeword_emb, transformer, heads, mask_emb };

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::conv: return "conv";
    case ParamGroup::codeword_emb: return "codeword_emb";
    case ParamGroup::transformer: return "transformer";
    case ParamGroup::heads: return "heads";
    case ParamGroup::mask_emb: return "mask_emb";
  }
  return "?";
}

inline ParamGroup parse_group(const std::string& s) {
  for (auto g : {ParamGroup::conv, ParamGroup::codeword_emb, ParamGroup::transformer, ParamGroup::heads,
                 ParamGroup::mask_emb}) {
    if (s == group_name(g)) return g;
  }
  throw Error(ErrorKind::config, "unknown parameter group '" + s + "'");
}

inline bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

/// Group of a canonical parameter name. The feature-extractor projection
/// belongs with the convolutions; positional embeddings with the encoder.
inline ParamGroup group_of(const std::string& name) {
  if (starts_with(name, "conv/") || starts_with(name, "feature/")) return ParamGroup::conv;
  if (starts_with(name, "head/rvq/emb/")) return ParamGroup::codeword_emb;
  if (starts_with(name, "encoder/") || starts_with(name, "pos/")) return ParamGroup::transformer;
  if (starts_with(name, "head/")) return ParamGroup::heads;
  if (starts_with(name, "mask/")) return ParamGroup::mask_emb;
  throw Error(ErrorKind::shape, "parameter '" + name + "' is not in the canonical schema");
}

struct SchemaEntry {
  std::string name;
  std::vector<std::size_t> shape;
  enum class Init { fan_in, zeros, ones, unit_normal, small_normal } init;
  std::size_t fan_in = 1;
};

/// Canonical parameter schema. Linear weights are [out x in].
inline std::vector<SchemaEntry> parameter_schema(const ModelConfig& c) {
  using I = SchemaEntry::Init;
  std::vector<SchemaEntry> s;
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < c.conv.size(); ++i) {
    const auto& l = c.conv[i];
    const std::string p = "conv/" + std::to_string(i) + "/";
    s.push_back({p + "weight", {l.channels, in_ch, l.kernel}, I::fan_in, in_ch * l.kernel});
    s.push_back({p + "bias", {l.channels}, I::zeros});
    in_ch = l.channels;
  }
  const std::size_t d = c.d_model;
  s.push_back({"feature/proj/weight", {d, in_ch}, I::fan_in, in_ch});
  s.push_back({"feature/proj/bias", {d}, I::zeros});
  s.push_back({"pos/embedding", {c.max_frames, d}, I::small_normal});
  s.push_back({"mask/embedding", {d}, I::unit_normal});
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "encoder/layer" + std::to_string(i) + "/";
    s.push_back({p + "ln1/gain", {d}, I::ones});
    s.push_back({p + "ln1/bias", {d}, I::zeros});
    for (const char* w : {"q", "k", "v", "o"}) {
      s.push_back({p + "attn/w" + w, {d, d}, I::fan_in, d});
      s.push_back({p + "attn/b" + w, {d}, I::zeros});
    }
    s.push_back({p + "ln2/gain", {d}, I::ones});
    s.push_back({p + "ln2/bias", {d}, I::zeros});
    s.push_back({p + "ffn/w1", {c.ffn_dim, d}, I::fan_in, d});
    s.push_back({p + "ffn/b1", {c.ffn_dim}, I::zeros});
    s.push_back({p + "ffn/w2", {d, c.ffn_dim}, I::fan_in, c.ffn_dim});
    s.push_back({p + "ffn/b2", {d}, I::zeros});
  }
  s.push_back({"encoder/final_ln/gain", {d}, I::ones});
  s.push_back({"encoder/final_ln/bias", {d}, I::zeros});
  s.push_back({"head/rvq/proj", {c.K * c.d_embed, d}, I::fan_in, d});
  s.push_back({"head/rvq/proj_bias", {c.K * c.d_embed}, I::zeros});
  for (std::size_t k = 0; k < c.K; ++k) {
    s.push_back({"head/rvq/emb/" + std::to_string(k), {c.C, c.d_embed}, I::unit_normal});
  }
  s.push_back({"head/cqt/weight", {c.cqt_bins, d}, I::fan_in, d});
  s.push_back({"head/cqt/bias", {c.cqt_bins}, I::zeros});
  return s;
}

}  // namespace cmrt::model
