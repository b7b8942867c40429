#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "cmrt/dsp/transforms.hpp"
#include "cmrt/dsp/wav.hpp"
#include "cmrt/model/model.hpp"
#include "cmrt/probe/metrics.hpp"
#include "cmrt/rng.hpp"

namespace cmrt::probe {

using model::Mat;

struct LastLayer {};
struct LayerIndex {
  std::size_t index = 0;
};
struct LearnedWeighted {};
/// Which representation feeds the probe. Layer indices 0..n_layers-1 are the
/// transformer blocks; index n_layers (= LastLayer) is the final-normalized
/// encoder output.
using FeatureLayer = std::variant<LastLayer, LayerIndex, LearnedWeighted>;

struct ProbeConfig {
  std::size_t hidden_dim = 512;
  FeatureLayer feature_layer = LastLayer{};
  std::size_t epochs = 100;
  double lr = 1e-3;
  std::size_t batch = 32;
  double weight_decay = 0.0;
  double window_seconds = 30.0;
  double max_duration = 0.0;  // seconds; 0 keeps whole recordings
  std::uint64_t rng_seed = 0;
};

/// Time average of a [frames x dim] matrix.
inline std::vector<double> mean_pool(const Mat& frames) {
  const Eigen::RowVectorXd m = frames.colwise().mean();
  return std::vector<double>(m.data(), m.data() + m.size());
}

inline std::size_t layer_count(const model::ModelConfig& cfg) { return cfg.n_layers + 1; }

/// Forward pass with an empty mask; per-frame states of the selected layer
/// are averaged over time. LearnedWeighted returns every layer's average
/// concatenated (layer-major) so the probe can learn the mixture.
inline std::vector<double> extract_clip_features(const model::ModelParams& params, const model::ModelConfig& cfg,
                                                 const dsp::AudioBuffer& buf, const ProbeConfig& pc) {
  const Mat feats = model::feature_extractor_forward(params, cfg, buf);
  const auto out = model::encoder_forward(params, cfg, feats, model::MaskSpec::none(static_cast<std::size_t>(feats.rows())));
  auto layer = [&](std::size_t i) -> const Mat& { return i < cfg.n_layers ? out.hidden_states[i] : out.encoded; };
  if (std::holds_alternative<LastLayer>(pc.feature_layer)) return mean_pool(out.encoded);
  if (const auto* li = std::get_if<LayerIndex>(&pc.feature_layer)) {
    require(li->index < layer_count(cfg), "extract_clip_features: layer index out of range");
    return mean_pool(layer(li->index));
  }
  std::vector<double> all;
  for (std::size_t i = 0; i < layer_count(cfg); ++i) {
    const auto v = mean_pool(layer(i));
    all.insert(all.end(), v.begin(), v.end());
  }
  return all;
}

/// One-hidden-layer ReLU MLP with sigmoid outputs, on standardized inputs.
struct ProbeParams {
  std::size_t layers = 1;  // > 1 when inputs are per-layer stacks
  std::vector<double> layer_logits;  // learned mixture weights (softmax)
  std::vector<double> mean, inv_std;  // input standardization
  Mat w1, w2;                        // [hidden x in], [tags x hidden]
  Eigen::RowVectorXd b1, b2;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
  friend bool operator==(const ProbeParams& a, const ProbeParams& b) {
    return a.layers == b.layers && a.layer_logits == b.layer_logits && a.mean == b.mean && a.inv_std == b.inv_std &&
           a.w1 == b.w1 && a.w2 == b.w2 && a.b1 == b.b1 && a.b2 == b.b2;
  }
};

namespace detail {

inline std::vector<double> softmax(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (double& v : p) v /= s;
  return p;
}

/// Standardize rows and, for stacked inputs, collapse layers with the
/// mixture weights. Returns [n x dim].
inline Mat prepare_inputs(const ProbeParams& p, const std::vector<std::vector<double>>& x) {
  const std::size_t full = p.mean.size();
  const std::size_t dim = full / p.layers;
  Mat out = Mat::Zero(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(dim));
  const auto w = softmax(p.layer_logits);
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i].size() == full, "probe: feature length mismatch", ErrorKind::shape);
    for (std::size_t l = 0; l < p.layers; ++l) {
      for (std::size_t d = 0; d < dim; ++d) {
        const std::size_t j = l * dim + d;
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) += w[l] * (x[i][j] - p.mean[j]) * p.inv_std[j];
      }
    }
  }
  return out;
}

inline Mat sigmoid(const Mat& z) { return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }); }

}  // namespace detail

/// Logits [n x tags] for raw (unstandardized) features.
inline Mat probe_logits(const ProbeParams& p, const std::vector<std::vector<double>>& x) {
  const Mat in = detail::prepare_inputs(p, x);
  Mat h = in * p.w1.transpose();
  h.rowwise() += p.b1;
  h = h.cwiseMax(0.0);
  Mat z = h * p.w2.transpose();
  z.rowwise() += p.b2;
  return z;
}

inline Mat probe_scores(const ProbeParams& p, const std::vector<std::vector<double>>& x) {
  return detail::sigmoid(probe_logits(p, x));
}

/// Standardization statistics from the data plus seeded Gaussian weights.
/// Rejects datasets with no positive label anywhere.
inline ProbeParams init_probe(const std::vector<std::vector<double>>& features,
                              const std::vector<std::vector<int>>& labels, std::size_t layers, const ProbeConfig& cfg) {
  require(!features.empty() && features.size() == labels.size(), "train_probe: empty or mismatched dataset",
          ErrorKind::shape);
  require(cfg.hidden_dim >= 1, "train_probe: hidden_dim must be >= 1", ErrorKind::config);
  require(layers >= 1 && features.front().size() % layers == 0, "train_probe: bad layer stacking", ErrorKind::shape);
  const std::size_t n = features.size(), full = features.front().size(), tags = labels.front().size();
  std::size_t positives = 0;
  for (const auto& row : labels) {
    require(row.size() == tags, "train_probe: ragged labels", ErrorKind::shape);
    for (int v : row) positives += v != 0;
  }
  require(positives > 0, "train_probe: degenerate dataset, no positive labels in any tag");

  ProbeParams p;
  p.layers = layers;
  p.layer_logits.assign(layers, 0.0);
  p.mean.assign(full, 0.0);
  p.inv_std.assign(full, 1.0);
  for (const auto& row : features) {
    require(row.size() == full, "train_probe: ragged features", ErrorKind::shape);
    for (std::size_t j = 0; j < full; ++j) p.mean[j] += row[j] / static_cast<double>(n);
  }
  for (std::size_t j = 0; j < full; ++j) {
    double var = 0.0;
    for (const auto& row : features) var += (row[j] - p.mean[j]) * (row[j] - p.mean[j]);
    var /= static_cast<double>(n);
    p.inv_std[j] = 1.0 / std::sqrt(var + 1e-8);
  }
  const std::size_t dim = full / layers;
  Rng rng(cfg.rng_seed);
  p.w1.resize(static_cast<Eigen::Index>(cfg.hidden_dim), static_cast<Eigen::Index>(dim));
  p.w2.resize(static_cast<Eigen::Index>(tags), static_cast<Eigen::Index>(cfg.hidden_dim));
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = rng.normal() / std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) {
    p.w2.data()[i] = rng.normal() / std::sqrt(static_cast<double>(cfg.hidden_dim));
  }
  p.b1 = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(cfg.hidden_dim));
  p.b2 = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(tags));
  return p;
}

/// Per-tag binary cross-entropy, Adam, mini-batches in a seeded order.
inline ProbeParams train_probe(const std::vector<std::vector<double>>& features,
                               const std::vector<std::vector<int>>& labels, std::size_t layers, const ProbeConfig& cfg) {
  ProbeParams p = init_probe(features, labels, layers, cfg);
  const std::size_t n = features.size(), tags = labels.front().size(), dim = p.mean.size() / layers;
  Rng rng(derive_seed(cfg.rng_seed, 1));

  // Adam state.
  Mat m_w1 = Mat::Zero(p.w1.rows(), p.w1.cols()), v_w1 = m_w1;
  Mat m_w2 = Mat::Zero(p.w2.rows(), p.w2.cols()), v_w2 = m_w2;
  Eigen::RowVectorXd m_b1 = Eigen::RowVectorXd::Zero(p.b1.size()), v_b1 = m_b1;
  Eigen::RowVectorXd m_b2 = Eigen::RowVectorXd::Zero(p.b2.size()), v_b2 = m_b2;
  std::vector<double> m_l(layers, 0.0), v_l(layers, 0.0);
  const double b1c = 0.9, b2c = 0.999, eps = 1e-8;
  std::size_t t = 0;
  auto adam = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1c * m + (1.0 - b1c) * g;
    v = b2c * v + (1.0 - b2c) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1c, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2c, static_cast<double>(t));
    param.array() -= cfg.lr * ((m.array() / c1) / ((v.array() / c2).sqrt() + eps) + cfg.weight_decay * param.array());
  };

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::size_t bs = std::max<std::size_t>(1, std::min(cfg.batch, n));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      std::vector<std::vector<double>> xb;
      Mat y(static_cast<Eigen::Index>(end - start), static_cast<Eigen::Index>(tags));
      for (std::size_t i = start; i < end; ++i) {
        xb.push_back(features[order[i]]);
        for (std::size_t j = 0; j < tags; ++j) {
          y(static_cast<Eigen::Index>(i - start), static_cast<Eigen::Index>(j)) = labels[order[i]][j] != 0 ? 1.0 : 0.0;
        }
      }
      const Mat in = detail::prepare_inputs(p, xb);
      Mat pre = in * p.w1.transpose();
      pre.rowwise() += p.b1;
      const Mat h = pre.cwiseMax(0.0);
      Mat z = h * p.w2.transpose();
      z.rowwise() += p.b2;
      const double scale = 1.0 / static_cast<double>((end - start) * tags);
      const Mat dz = (detail::sigmoid(z) - y) * scale;
      const Mat g_w2 = dz.transpose() * h;
      const Eigen::RowVectorXd g_b2 = dz.colwise().sum();
      const Mat dh = (dz * p.w2).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
      const Mat g_w1 = dh.transpose() * in;
      const Eigen::RowVectorXd g_b1 = dh.colwise().sum();
      std::vector<double> g_l(layers, 0.0);
      if (layers > 1) {
        // d loss / d mixture weight w_l = sum over rows of <d in, standardized layer l>.
        const Mat din = dh * p.w1;
        const auto w = detail::softmax(p.layer_logits);
        std::vector<double> g_w(layers, 0.0);
        for (std::size_t r = 0; r < xb.size(); ++r) {
          for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t d = 0; d < dim; ++d) {
              const std::size_t j = l * dim + d;
              g_w[l] += din(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) * (xb[r][j] - p.mean[j]) *
                        p.inv_std[j];
            }
          }
        }
        double dot = 0.0;
        for (std::size_t l = 0; l < layers; ++l) dot += w[l] * g_w[l];
        for (std::size_t l = 0; l < layers; ++l) g_l[l] = w[l] * (g_w[l] - dot);
      }
      ++t;
      adam(p.w1, m_w1, v_w1, g_w1);
      adam(p.w2, m_w2, v_w2, g_w2);
      adam(p.b1, m_b1, v_b1, g_b1);
      adam(p.b2, m_b2, v_b2, g_b2);
      if (layers > 1) {
        Eigen::Map<Eigen::RowVectorXd> pl(p.layer_logits.data(), static_cast<Eigen::Index>(layers));
        Eigen::Map<Eigen::RowVectorXd> ml(m_l.data(), static_cast<Eigen::Index>(layers));
        Eigen::Map<Eigen::RowVectorXd> vl(v_l.data(), static_cast<Eigen::Index>(layers));
        Eigen::Map<const Eigen::RowVectorXd> gl(g_l.data(), static_cast<Eigen::Index>(layers));
        adam(pl, ml, vl, gl);
      }
    }
  }
  return p;
}

/// Non-overlapping windows of window_seconds; the final short window is
/// zero-padded to full length. Window-level sigmoid scores are averaged.
inline std::vector<dsp::AudioBuffer> split_windows(const dsp::AudioBuffer& buf, const ProbeConfig& cfg) {
  dsp::validate(buf, "predict_recording");
  require(cfg.window_seconds > 0.0, "predict_recording: window must be positive", ErrorKind::config);
  dsp::AudioBuffer src = buf;
  if (cfg.max_duration > 0.0) {
    const auto cut = static_cast<std::size_t>(std::llround(cfg.max_duration * buf.sample_rate));
    if (cut > 0 && cut < src.size()) src.samples.resize(cut);
  }
  const auto win = static_cast<std::size_t>(std::llround(cfg.window_seconds * src.sample_rate));
  std::vector<dsp::AudioBuffer> out;
  for (std::size_t start = 0; start < src.size(); start += win) {
    dsp::AudioBuffer w{std::vector<double>(win, 0.0), src.sample_rate};
    const std::size_t len = std::min(win, src.size() - start);
    std::copy_n(src.samples.begin() + static_cast<long>(start), len, w.samples.begin());
    out.push_back(std::move(w));
  }
  return out;
}

inline std::vector<double> predict_recording(const model::ModelParams& params, const model::ModelConfig& mcfg,
                                             const ProbeParams& probe, const dsp::AudioBuffer& buf,
                                             const ProbeConfig& cfg) {
  const auto windows = split_windows(buf, cfg);
  std::vector<std::vector<double>> feats;
  for (const auto& w : windows) feats.push_back(extract_clip_features(params, mcfg, w, cfg));
  const Mat s = probe_scores(probe, feats);
  const Eigen::RowVectorXd mean = s.colwise().mean();
  return std::vector<double>(mean.data(), mean.data() + mean.size());
}

// ---------------------------------------------------------------------------
// Task datasets

enum class Split { train, valid, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw Error(ErrorKind::format, "unknown split '" + s + "'");
}

struct TaggedClip {
  std::string id;  // path in a manifest
  Split split = Split::train;
  std::vector<int> labels;  // multi-hot over TaskDataset::tags
  dsp::AudioBuffer audio;
};

struct TaskDataset {
  std::string name;
  std::vector<std::string> tags;
  std::vector<TaggedClip> clips;
};

/// Manifest CSV: header "path,split,tags"; tags are ';'-separated. Paths are
/// resolved relative to the manifest's directory. The tag vocabulary is the
/// sorted union of all tags.
inline TaskDataset load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot open manifest '" + path.string() + "'");
  std::string line;
  std::getline(is, line);
  if (line.rfind("path,split,tags", 0) != 0) {
    throw Error(ErrorKind::format, path.string() + ": manifest header must be 'path,split,tags'");
  }
  struct Row {
    std::string file, split;
    std::vector<std::string> tags;
  };
  std::vector<Row> rows;
  std::set<std::string> vocab;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    Row r;
    std::string tags;
    std::getline(ss, r.file, ',');
    std::getline(ss, r.split, ',');
    std::getline(ss, tags);
    std::stringstream ts(tags);
    for (std::string tag; std::getline(ts, tag, ';');) {
      if (!tag.empty()) {
        r.tags.push_back(tag);
        vocab.insert(tag);
      }
    }
    rows.push_back(std::move(r));
  }
  TaskDataset ds;
  ds.name = path.stem().string();
  ds.tags.assign(vocab.begin(), vocab.end());
  for (const auto& r : rows) {
    TaggedClip c;
    c.id = r.file;
    c.split = parse_split(r.split);
    c.labels.assign(ds.tags.size(), 0);
    for (const auto& t : r.tags) {
      c.labels[static_cast<std::size_t>(std::lower_bound(ds.tags.begin(), ds.tags.end(), t) - ds.tags.begin())] = 1;
    }
    c.audio = dsp::read_wav(path.parent_path() / r.file);
    ds.clips.push_back(std::move(c));
  }
  return ds;
}

inline void write_manifest(std::ostream& os, const TaskDataset& ds) {
  os << "path,split,tags\n";
  for (const auto& c : ds.clips) {
    os << c.id << ',' << split_name(c.split) << ',';
    bool first = true;
    for (std::size_t j = 0; j < ds.tags.size(); ++j) {
      if (!c.labels[j]) continue;
      if (!first) os << ';';
      os << ds.tags[j];
      first = false;
    }
    os << '\n';
  }
}

struct Evaluation {
  MetricsReport report;
  ProbeParams probe;
  std::vector<std::size_t> train_indices, test_indices;
};

/// Extract features for the training split, fit the probe, score the test
/// split recording by recording and compute per-tag and macro metrics.
inline Evaluation evaluate_model(const model::ModelParams& params, const model::ModelConfig& mcfg,
                                 const TaskDataset& ds, const ProbeConfig& cfg) {
  Evaluation ev;
  std::vector<std::vector<double>> train_x;
  std::vector<std::vector<int>> train_y;
  std::set<std::string> train_ids;
  for (std::size_t i = 0; i < ds.clips.size(); ++i) {
    const auto& c = ds.clips[i];
    require(c.labels.size() == ds.tags.size(), "evaluate_model: label length != vocabulary size", ErrorKind::shape);
    if (c.split == Split::train) {
      ev.train_indices.push_back(i);
      train_ids.insert(c.id);
      for (const auto& w : split_windows(c.audio, cfg)) {
        train_x.push_back(extract_clip_features(params, mcfg, w, cfg));
        train_y.push_back(c.labels);
      }
    } else if (c.split == Split::test) {
      ev.test_indices.push_back(i);
    }
  }
  require(!ev.train_indices.empty() && !ev.test_indices.empty(), "evaluate_model: need train and test clips",
          ErrorKind::config);
  for (std::size_t i : ev.test_indices) {
    require(!train_ids.count(ds.clips[i].id), "evaluate_model: clip '" + ds.clips[i].id + "' is in both splits",
            ErrorKind::config);
  }
  const std::size_t layers = std::holds_alternative<LearnedWeighted>(cfg.feature_layer) ? layer_count(mcfg) : 1;
  ev.probe = train_probe(train_x, train_y, layers, cfg);
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
  for (std::size_t i : ev.test_indices) {
    scores.push_back(predict_recording(params, mcfg, ev.probe, ds.clips[i].audio, cfg));
    labels.push_back(ds.clips[i].labels);
  }
  ev.report = tag_metrics(ds.tags, scores, labels);
  return ev;
}

struct SeedSummary {
  std::vector<double> roc_auc, ap;  // per seed
  double roc_mean = 0.0, roc_std = 0.0, ap_mean = 0.0, ap_std = 0.0;
};

/// Repeats evaluate_model over probe seeds; population standard deviation.
inline SeedSummary evaluate_model_seeds(const model::ModelParams& params, const model::ModelConfig& mcfg,
                                        const TaskDataset& ds, ProbeConfig cfg, const std::vector<std::uint64_t>& seeds) {
  SeedSummary s;
  for (auto seed : seeds) {
    cfg.rng_seed = seed;
    const auto ev = evaluate_model(params, mcfg, ds, cfg);
    s.roc_auc.push_back(ev.report.roc_auc_macro);
    s.ap.push_back(ev.report.ap_macro);
  }
  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    sd = 0.0;
    for (double x : v) sd += (x - mean) * (x - mean) / static_cast<double>(v.size());
    sd = std::sqrt(sd);
  };
  stats(s.roc_auc, s.roc_mean, s.roc_std);
  stats(s.ap, s.ap_mean, s.ap_std);
  return s;
}

inline void write_metrics_csv(std::ostream& os, const MetricsReport& r) {
  os.precision(17);
  os << "tag,roc_auc,ap\n";
  for (std::size_t j = 0; j < r.tags.size(); ++j) {
    os << r.tags[j] << ',';
    if (r.roc_auc[j]) os << *r.roc_auc[j];
    os << ',';
    if (r.ap[j]) os << *r.ap[j];
    os << '\n';
  }
  os << "macro," << r.roc_auc_macro << ',' << r.ap_macro << '\n';
}

}  // namespace cmrt::probe
