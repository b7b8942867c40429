#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmrt/dsp/audio.hpp"
#include "cmrt/model/config.hpp"
#include "cmrt/model/layers.hpp"
#include "cmrt/rng.hpp"
#include "cmrt/tensor.hpp"

namespace cmrt::model {

using ModelParams = TensorMap;

// ---------------------------------------------------------------------------
// Masking

struct MaskSpec {
  std::size_t total_frames = 0;
  std::vector<std::uint8_t> flags;  // 1 = masked

  static MaskSpec none(std::size_t frames) { return {frames, std::vector<std::uint8_t>(frames, 0)}; }

  bool contains(std::size_t t) const { return flags[t] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto f : flags) n += f;
    return n;
  }
  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < flags.size(); ++t) {
      if (flags[t]) out.push_back(t);
    }
    return out;
  }
  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

/// Span masking: every frame starts a span with probability `start_prob`;
/// spans of `span` frames, clipped at the end, are unioned.
inline MaskSpec apply_mask(std::size_t frames, double start_prob, std::size_t span, std::uint64_t rng_seed) {
  require(frames >= 1, "apply_mask: frames must be >= 1");
  require(start_prob >= 0.0 && start_prob <= 1.0, "apply_mask: start probability must be in [0, 1]");
  MaskSpec m = MaskSpec::none(frames);
  Rng rng(rng_seed);
  for (std::size_t t = 0; t < frames; ++t) {
    if (!rng.bernoulli(start_prob)) continue;
    for (std::size_t s = t; s < std::min(frames, t + span); ++s) m.flags[s] = 1;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Initialization

inline ModelParams init_model(const ModelConfig& cfg) {
  validate(cfg);
  Rng rng(derive_seed(cfg.rng_seed, 0x1417));
  ModelParams p;
  for (const auto& e : parameter_schema(cfg)) {
    Tensor t(e.shape);
    using I = SchemaEntry::Init;
    switch (e.init) {
      case I::fan_in: {
        const double sd = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
        for (double& v : t.data) v = rng.normal() * sd;
        break;
      }
      case I::zeros: break;
      case I::ones:
        for (double& v : t.data) v = 1.0;
        break;
      case I::unit_normal:
        for (double& v : t.data) v = rng.normal();
        break;
      case I::small_normal:
        for (double& v : t.data) v = rng.normal() * 0.02;
        break;
    }
    p.set(e.name, std::move(t));
  }
  return p;
}

/// Every schema tensor present with its shape, and all entries finite.
inline void validate_params(const ModelParams& p, const ModelConfig& cfg) {
  const auto schema = parameter_schema(cfg);
  require(p.size() == schema.size(), "model params: expected " + std::to_string(schema.size()) + " tensors, got " +
                                         std::to_string(p.size()),
          ErrorKind::shape);
  for (const auto& e : schema) {
    const Tensor& t = p.at(e.name);
    require(t.shape == e.shape, "model params: '" + e.name + "' has the wrong shape", ErrorKind::shape);
    require(first_non_finite(t) < 0, "model params: '" + e.name + "' contains non-finite values", ErrorKind::numeric);
  }
}

// ---------------------------------------------------------------------------
// Feature extractor: raw waveform -> [frames x d_model]

struct ExtractorCache {
  std::vector<ConvCache> conv;
  std::vector<Mat> pre_act;
  Mat conv_out;  // [frames x channels], input of the projection
};

inline std::size_t model_frame_count(const ModelConfig& cfg, std::size_t n_samples) {
  return dsp::frame_count(n_samples, cfg.frame_stride);
}

/// Each conv is followed by GELU. The waveform is zero-padded to a whole
/// number of strides, so a buffer of n samples yields ceil(n / stride) frames.
inline Mat feature_extractor_forward(const ModelParams& p, const ModelConfig& cfg, const dsp::AudioBuffer& buf,
                                     ExtractorCache* cache = nullptr) {
  require(buf.sample_rate == cfg.sample_rate, "feature_extractor: sample rate " + std::to_string(buf.sample_rate) +
                                                  " != model rate " + std::to_string(cfg.sample_rate));
  require(buf.size() >= cfg.frame_stride, "feature_extractor: buffer of " + std::to_string(buf.size()) +
                                              " samples is shorter than one frame (" +
                                              std::to_string(cfg.frame_stride) + ")");
  const std::size_t frames = model_frame_count(cfg, buf.size());
  Mat x = Mat::Zero(1, static_cast<Eigen::Index>(frames * cfg.frame_stride));
  for (std::size_t i = 0; i < buf.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = buf.samples[i];

  ExtractorCache local;
  ExtractorCache& c = cache ? *cache : local;
  c.conv.assign(cfg.conv.size(), {});
  c.pre_act.assign(cfg.conv.size(), {});
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const std::string base = "conv/" + std::to_string(i) + "/";
    Mat pre = conv1d(x, p.at(base + "weight"), p.at(base + "bias"), cfg.conv[i].stride, c.conv[i]);
    x = gelu(pre);
    if (cache) c.pre_act[i] = std::move(pre);
  }
  c.conv_out = x.transpose();
  return linear(c.conv_out, p.at("feature/proj/weight"), p.at("feature/proj/bias"));
}

inline void feature_extractor_backward(const ModelParams& p, const ModelConfig& cfg, const ExtractorCache& c,
                                       const Mat& d_feats, TensorMap& g) {
  Mat dx = linear_backward(c.conv_out, p.at("feature/proj/weight"), d_feats, g.at("feature/proj/weight"),
                           g.at("feature/proj/bias"))
               .transpose();
  for (std::size_t i = cfg.conv.size(); i-- > 0;) {
    const std::string base = "conv/" + std::to_string(i) + "/";
    const Mat dpre = gelu_backward(c.pre_act[i], dx);
    dx = conv1d_backward(dpre, p.at(base + "weight"), cfg.conv[i].stride, c.conv[i], g.at(base + "weight"),
                         g.at(base + "bias"));
  }
}

// ---------------------------------------------------------------------------
// Encoder and heads

struct ForwardOutput {
  std::size_t frames = 0, K = 0, C = 0;
  std::vector<double> rvq_logits;   // [frames x K x C]
  Mat cqt_pred;                     // [frames x cqt_bins]
  std::vector<Mat> hidden_states;   // one [frames x d_model] per layer
  Mat encoded;                      // final-normalized encoder output

  double logit(std::size_t t, std::size_t k, std::size_t c) const { return rvq_logits[(t * K + k) * C + c]; }
};

struct LayerCache {
  LayerNormCache ln1, ln2;
  AttentionCache attn;
  Mat ffn_in, ffn_pre, ffn_act;
};

struct EncoderCache {
  MaskSpec mask;
  std::vector<LayerCache> layers;
  LayerNormCache final_ln;
  Mat proj;                     // [frames x K*d_embed]
  std::vector<Mat> unit_u;      // per codebook [frames x d_embed]
  std::vector<Vec> norm_u;
  std::vector<Mat> unit_e;      // per codebook [C x d_embed]
  std::vector<Vec> norm_e;
};

inline constexpr double kCosineEps = 1e-12;

inline std::string layer_prefix(std::size_t i) { return "encoder/layer" + std::to_string(i) + "/"; }

/// Masked frames take the learned mask embedding; positions are added; a
/// Pre-LN transformer follows. RVQ logits are cosine similarities between the
/// projected output and each codeword embedding, divided by tau.
inline ForwardOutput encoder_forward(const ModelParams& p, const ModelConfig& cfg, const Mat& frame_feats,
                                     const MaskSpec& mask, EncoderCache* cache = nullptr) {
  const auto T = static_cast<std::size_t>(frame_feats.rows());
  require(T == mask.total_frames, "encoder_forward: feature rows (" + std::to_string(T) + ") != mask frames (" +
                                      std::to_string(mask.total_frames) + ")",
          ErrorKind::shape);
  require(static_cast<std::size_t>(frame_feats.cols()) == cfg.d_model, "encoder_forward: feature width != d_model",
          ErrorKind::shape);
  require(T <= cfg.max_frames, "encoder_forward: " + std::to_string(T) + " frames exceed max_frames " +
                                   std::to_string(cfg.max_frames),
          ErrorKind::shape);
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.mask = mask;
  c.layers.assign(cfg.n_layers, {});

  Mat x = frame_feats;
  const ConstRowMap mask_emb = as_row(p.at("mask/embedding"));
  for (std::size_t t = 0; t < T; ++t) {
    if (mask.contains(t)) x.row(static_cast<Eigen::Index>(t)) = mask_emb;
  }
  x += as_matrix(p.at("pos/embedding")).topRows(static_cast<Eigen::Index>(T));

  ForwardOutput out;
  out.frames = T;
  out.K = cfg.K;
  out.C = cfg.C;
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string b = layer_prefix(i);
    LayerCache& lc = c.layers[i];
    const Mat h1 = layer_norm(x, p.at(b + "ln1/gain"), p.at(b + "ln1/bias"), lc.ln1);
    x += attention(h1, p.at(b + "attn/wq"), p.at(b + "attn/bq"), p.at(b + "attn/wk"), p.at(b + "attn/bk"),
                   p.at(b + "attn/wv"), p.at(b + "attn/bv"), p.at(b + "attn/wo"), p.at(b + "attn/bo"), cfg.n_heads,
                   lc.attn);
    lc.ffn_in = layer_norm(x, p.at(b + "ln2/gain"), p.at(b + "ln2/bias"), lc.ln2);
    lc.ffn_pre = linear(lc.ffn_in, p.at(b + "ffn/w1"), p.at(b + "ffn/b1"));
    lc.ffn_act = gelu(lc.ffn_pre);
    x += linear(lc.ffn_act, p.at(b + "ffn/w2"), p.at(b + "ffn/b2"));
    out.hidden_states.push_back(x);
  }
  out.encoded = layer_norm(x, p.at("encoder/final_ln/gain"), p.at("encoder/final_ln/bias"), c.final_ln);

  // RVQ head.
  c.proj = linear(out.encoded, p.at("head/rvq/proj"), p.at("head/rvq/proj_bias"));
  const auto de = static_cast<Eigen::Index>(cfg.d_embed);
  const double inv_tau = 1.0 / cfg.tau;
  out.rvq_logits.assign(T * cfg.K * cfg.C, 0.0);
  c.unit_u.assign(cfg.K, {});
  c.norm_u.assign(cfg.K, {});
  c.unit_e.assign(cfg.K, {});
  c.norm_e.assign(cfg.K, {});
  for (std::size_t k = 0; k < cfg.K; ++k) {
    const Mat u = c.proj.middleCols(static_cast<Eigen::Index>(k) * de, de);
    const ConstMatMap e = as_matrix(p.at("head/rvq/emb/" + std::to_string(k)));
    c.norm_u[k] = (u.rowwise().squaredNorm().array() + kCosineEps).sqrt();
    c.norm_e[k] = (e.rowwise().squaredNorm().array() + kCosineEps).sqrt();
    c.unit_u[k] = u.array().colwise() / c.norm_u[k].array();
    c.unit_e[k] = e.array().colwise() / c.norm_e[k].array();
    const Mat cosine = c.unit_u[k] * c.unit_e[k].transpose();
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t cw = 0; cw < cfg.C; ++cw) {
        out.rvq_logits[(t * cfg.K + k) * cfg.C + cw] =
            cosine(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(cw)) * inv_tau;
      }
    }
  }
  out.cqt_pred = linear(out.encoded, p.at("head/cqt/weight"), p.at("head/cqt/bias"));
  return out;
}

/// Gradients of a scalar objective with respect to the forward outputs.
struct OutputGrads {
  std::vector<double> d_logits;  // [frames x K x C]
  Mat d_cqt;                     // [frames x cqt_bins]
};

/// Backpropagates through heads and encoder; accumulates into `g` and returns
/// the gradient with respect to the frame features.
inline Mat encoder_backward(const ModelParams& p, const ModelConfig& cfg, const EncoderCache& c,
                            const ForwardOutput& out, const OutputGrads& dout, TensorMap& g) {
  const std::size_t T = out.frames;
  const auto de = static_cast<Eigen::Index>(cfg.d_embed);
  const double inv_tau = 1.0 / cfg.tau;

  Mat d_encoded = linear_backward(out.encoded, p.at("head/cqt/weight"), dout.d_cqt, g.at("head/cqt/weight"),
                                  g.at("head/cqt/bias"));

  Mat d_proj = Mat::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(cfg.K) * de);
  for (std::size_t k = 0; k < cfg.K; ++k) {
    Mat dcos(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(cfg.C));
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t cw = 0; cw < cfg.C; ++cw) {
        dcos(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(cw)) =
            dout.d_logits[(t * cfg.K + k) * cfg.C + cw] * inv_tau;
      }
    }
    const Mat d_unit_u = dcos * c.unit_e[k];
    const Mat d_unit_e = dcos.transpose() * c.unit_u[k];
    // d(v/|v|) backprop: (dv_hat - v_hat <v_hat, dv_hat>) / |v|
    const Vec ru = d_unit_u.cwiseProduct(c.unit_u[k]).rowwise().sum();
    const Mat du = (d_unit_u - c.unit_u[k].cwiseProduct(ru.replicate(1, de))).array().colwise() / c.norm_u[k].array();
    const Vec re = d_unit_e.cwiseProduct(c.unit_e[k]).rowwise().sum();
    const Mat dE = (d_unit_e - c.unit_e[k].cwiseProduct(re.replicate(1, de))).array().colwise() / c.norm_e[k].array();
    d_proj.middleCols(static_cast<Eigen::Index>(k) * de, de) = du;
    as_matrix(g.at("head/rvq/emb/" + std::to_string(k))) += dE;
  }
  d_encoded += linear_backward(out.encoded, p.at("head/rvq/proj"), d_proj, g.at("head/rvq/proj"),
                               g.at("head/rvq/proj_bias"));

  Mat dx = layer_norm_backward(d_encoded, p.at("encoder/final_ln/gain"), c.final_ln, g.at("encoder/final_ln/gain"),
                               g.at("encoder/final_ln/bias"));
  for (std::size_t i = cfg.n_layers; i-- > 0;) {
    const std::string b = layer_prefix(i);
    const LayerCache& lc = c.layers[i];
    const Mat d_act = linear_backward(lc.ffn_act, p.at(b + "ffn/w2"), dx, g.at(b + "ffn/w2"), g.at(b + "ffn/b2"));
    const Mat d_pre = gelu_backward(lc.ffn_pre, d_act);
    const Mat d_ln2 = linear_backward(lc.ffn_in, p.at(b + "ffn/w1"), d_pre, g.at(b + "ffn/w1"), g.at(b + "ffn/b1"));
    dx += layer_norm_backward(d_ln2, p.at(b + "ln2/gain"), lc.ln2, g.at(b + "ln2/gain"), g.at(b + "ln2/bias"));
    const Mat d_h1 = attention_backward(
        dx, p.at(b + "attn/wq"), p.at(b + "attn/wk"), p.at(b + "attn/wv"), p.at(b + "attn/wo"), cfg.n_heads, lc.attn,
        AttentionGrads{&g.at(b + "attn/wq"), &g.at(b + "attn/bq"), &g.at(b + "attn/wk"), &g.at(b + "attn/bk"),
                       &g.at(b + "attn/wv"), &g.at(b + "attn/bv"), &g.at(b + "attn/wo"), &g.at(b + "attn/bo")});
    dx += layer_norm_backward(d_h1, p.at(b + "ln1/gain"), lc.ln1, g.at(b + "ln1/gain"), g.at(b + "ln1/bias"));
  }

  as_matrix(g.at("pos/embedding")).topRows(static_cast<Eigen::Index>(T)) += dx;
  RowMap d_mask = as_row(g.at("mask/embedding"));
  for (std::size_t t = 0; t < T; ++t) {
    if (c.mask.contains(t)) {
      d_mask += dx.row(static_cast<Eigen::Index>(t));
      dx.row(static_cast<Eigen::Index>(t)).setZero();
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Composition

struct ForwardTrace {
  ExtractorCache extractor;
  EncoderCache encoder;
};

inline MaskSpec draw_mask(const ModelConfig& cfg, std::size_t frames, std::uint64_t rng_seed) {
  return apply_mask(frames, cfg.mask_start_prob, cfg.mask_span, rng_seed);
}

inline std::pair<ForwardOutput, MaskSpec> full_forward(const ModelParams& p, const ModelConfig& cfg,
                                                       const dsp::AudioBuffer& buf, std::uint64_t rng_seed,
                                                       ForwardTrace* trace = nullptr) {
  const Mat feats = feature_extractor_forward(p, cfg, buf, trace ? &trace->extractor : nullptr);
  MaskSpec mask = draw_mask(cfg, static_cast<std::size_t>(feats.rows()), rng_seed);
  ForwardOutput out = encoder_forward(p, cfg, feats, mask, trace ? &trace->encoder : nullptr);
  return {std::move(out), std::move(mask)};
}

/// Forward with an explicit mask, keeping everything backward needs.
inline ForwardOutput forward_masked(const ModelParams& p, const ModelConfig& cfg, const dsp::AudioBuffer& buf,
                                    const MaskSpec& mask, ForwardTrace& trace) {
  const Mat feats = feature_extractor_forward(p, cfg, buf, &trace.extractor);
  return encoder_forward(p, cfg, feats, mask, &trace.encoder);
}

inline void backward(const ModelParams& p, const ModelConfig& cfg, const ForwardTrace& trace,
                     const ForwardOutput& out, const OutputGrads& dout, TensorMap& grads) {
  const Mat d_feats = encoder_backward(p, cfg, trace.encoder, out, dout, grads);
  feature_extractor_backward(p, cfg, trace.extractor, d_feats, grads);
}

}  // namespace cmrt::model
