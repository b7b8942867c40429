#pragma once

#include <algorithm>
#include <functional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cmrt/checkpoint.hpp"
#include "cmrt/digest.hpp"

namespace cmrt::merge {

using ckpt::Checkpoint;

/// Shared scaling factors evaluated by default in a sweep.
inline const std::vector<double> kDefaultLambdas{0.1, 0.2, 0.25, 0.3, 0.5, 0.75, 1.0};

/// Parameter shift of an adapted checkpoint relative to its base.
struct TaskVector {
  TensorMap deltas;  // f64
  std::string base_digest;
  std::string source_label;
};

inline std::string checkpoint_digest(const Checkpoint& ck) { return digest_tensors(ck.params); }

inline TaskVector task_vector(const Checkpoint& adapted, const Checkpoint& base, std::string label = {}) {
  require(adapted.config_digest == base.config_digest,
          "task_vector: config digest mismatch (adapted " + adapted.config_digest.substr(0, 12) + " vs base " +
              base.config_digest.substr(0, 12) + ")",
          ErrorKind::config);
  require(adapted.params.congruent(base.params), "task_vector: parameter schemas are not congruent",
          ErrorKind::shape);
  TaskVector tv;
  tv.base_digest = checkpoint_digest(base);
  tv.source_label = label.empty() ? adapted.stage_label : std::move(label);
  for (const auto& [name, b] : base.params) {
    const Tensor& a = adapted.params.at(name);
    Tensor d(b.shape, DType::f64);
    for (std::size_t i = 0; i < d.size(); ++i) d.data[i] = a.data[i] - b.data[i];
    tv.deltas.set(name, std::move(d));
  }
  return tv;
}

struct MergeSpec {
  Checkpoint base;
  std::vector<std::pair<TaskVector, double>> vectors;  // (tau_i, lambda_i)
  std::set<std::string> exclude;  // tensor-name prefixes kept at base values
};

inline bool excluded(const std::string& name, const std::set<std::string>& prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) { return name.rfind(p, 0) == 0; });
}

/// theta = theta_base + sum_i lambda_i * tau_i, accumulated in double
/// precision in source-label order and rounded once to the base dtype.
inline Checkpoint merge_task_arithmetic(const MergeSpec& spec) {
  const std::string base_digest = checkpoint_digest(spec.base);
  std::vector<const std::pair<TaskVector, double>*> ordered;
  for (const auto& v : spec.vectors) {
    require(v.first.base_digest == base_digest,
            "merge: task vector '" + v.first.source_label + "' was extracted against a different base",
            ErrorKind::config);
    require(v.first.deltas.size() == spec.base.params.size(),
            "merge: task vector '" + v.first.source_label + "' is not congruent with the base", ErrorKind::shape);
    for (const auto& [name, t] : spec.base.params) {
      require(v.first.deltas.contains(name) && v.first.deltas.at(name).shape == t.shape,
              "merge: task vector '" + v.first.source_label + "' is not congruent at '" + name + "'",
              ErrorKind::shape);
    }
    ordered.push_back(&v);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](auto* a, auto* b) { return a->first.source_label < b->first.source_label; });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    require(ordered[i - 1]->first.source_label != ordered[i]->first.source_label,
            "merge: duplicate source label '" + ordered[i]->first.source_label + "'", ErrorKind::config);
  }

  Checkpoint out;
  out.config_digest = spec.base.config_digest;
  out.step = spec.base.step;
  out.stage_label = "merged";
  out.seed_record = spec.base.seed_record;
  out.extra = spec.base.extra;
  nlohmann::json sources = nlohmann::json::array();
  for (auto* v : ordered) sources.push_back({{"label", v->first.source_label}, {"lambda", v->second}});
  out.extra["merge"] = {{"method", "task_arithmetic"}, {"base_digest", base_digest}, {"sources", sources}};

  for (const auto& [name, b] : spec.base.params) {
    Tensor t = b;
    if (!excluded(name, spec.exclude)) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        double acc = b.data[i];
        for (auto* v : ordered) {
          if (v->second != 0.0) acc += v->second * v->first.deltas.at(name).data[i];  // keeps -0.0 at lambda 0
        }
        t.data[i] = acc;
      }
      t.round_to_dtype();
    }
    out.params.set(name, std::move(t));
  }
  return out;
}

/// Elementwise mean of adapted checkpoints sharing the base's architecture.
inline Checkpoint weight_average(const std::vector<Checkpoint>& checkpoints, const Checkpoint& base) {
  require(!checkpoints.empty(), "weight_average: no checkpoints given");
  for (const auto& c : checkpoints) {
    require(c.config_digest == base.config_digest, "weight_average: config digest mismatch", ErrorKind::config);
    require(c.params.congruent(base.params), "weight_average: schemas are not congruent", ErrorKind::shape);
  }
  Checkpoint out;
  out.config_digest = base.config_digest;
  out.step = base.step;
  out.stage_label = "weight_average";
  out.seed_record = base.seed_record;
  out.extra = base.extra;
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& c : checkpoints) labels.push_back(c.stage_label);
  out.extra["merge"] = {{"method", "weight_average"}, {"base_digest", checkpoint_digest(base)}, {"sources", labels}};
  const double n = static_cast<double>(checkpoints.size());
  for (const auto& [name, b] : base.params) {
    Tensor t(b.shape, b.dtype);
    for (std::size_t i = 0; i < t.size(); ++i) {
      double acc = 0.0;
      for (const auto& c : checkpoints) acc += c.params.at(name).data[i];
      t.data[i] = acc / n;
    }
    t.round_to_dtype();
    out.params.set(name, std::move(t));
  }
  return out;
}

struct SweepTable {
  std::vector<std::string> tasks;
  std::vector<double> lambdas;
  std::vector<std::vector<double>> metrics;  // [lambda][task]
};

/// Called with each merged checkpoint; returns one metric per task.
using EvalFn = std::function<std::vector<double>(const Checkpoint&)>;

inline SweepTable lambda_sweep(const Checkpoint& base, const std::vector<TaskVector>& vectors,
                               const std::vector<double>& lambdas, const std::vector<std::string>& tasks,
                               const EvalFn& eval_fn) {
  require(!lambdas.empty(), "lambda_sweep: no lambda values");
  SweepTable table{tasks, lambdas, {}};
  for (double lambda : lambdas) {
    MergeSpec spec{base, {}, {}};
    for (const auto& v : vectors) spec.vectors.emplace_back(v, lambda);
    auto row = eval_fn(merge_task_arithmetic(spec));
    require(row.size() == tasks.size(), "lambda_sweep: eval_fn returned " + std::to_string(row.size()) +
                                            " metrics for " + std::to_string(tasks.size()) + " tasks");
    table.metrics.push_back(std::move(row));
  }
  return table;
}

inline void write_sweep_csv(std::ostream& os, const SweepTable& t) {
  os.precision(17);
  os << "lambda";
  for (const auto& name : t.tasks) os << ',' << name;
  os << '\n';
  for (std::size_t i = 0; i < t.lambdas.size(); ++i) {
    os << t.lambdas[i];
    for (double m : t.metrics[i]) os << ',' << m;
    os << '\n';
  }
}

}  // namespace cmrt::merge
