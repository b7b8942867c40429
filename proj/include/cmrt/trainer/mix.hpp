#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmrt/error.hpp"
#include "cmrt/rng.hpp"

namespace cmrt::trainer {

/// Weighted corpus mixture with an optional replay corpus taking a fixed share.
struct DataMixSpec {
  std::vector<std::pair<std::string, double>> sources;
  std::optional<std::string> replay_source;
  double replay_fraction = 0.0;
};

struct ScheduledClip {
  std::string corpus;
  std::size_t clip = 0;

  friend bool operator==(const ScheduledClip&, const ScheduledClip&) = default;
};

/// Splits `total` into integer counts proportional to `weights` (largest
/// remainder, ties to the earlier source); every count is within 1 of exact.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / wsum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
  return counts;
}

/// Deterministic shuffled clip schedule. The replay corpus receives
/// round(replay_fraction * total) slots and the remaining slots follow the
/// source weights. Clips of each corpus are visited in a shuffled cyclic order.
inline std::vector<ScheduledClip> build_training_mix(const DataMixSpec& spec, std::size_t total_clips,
                                                     std::uint64_t rng_seed,
                                                     const std::map<std::string, std::size_t>& corpus_sizes) {
  require(spec.replay_fraction >= 0.0 && spec.replay_fraction <= 1.0,
          "build_training_mix: replay_fraction must be in [0, 1]", ErrorKind::config);
  require(spec.replay_fraction == 0.0 || spec.replay_source.has_value(),
          "build_training_mix: replay requested but no replay_source given", ErrorKind::config);
  for (const auto& [id, w] : spec.sources) {
    require(w > 0.0, "build_training_mix: weight of '" + id + "' must be positive", ErrorKind::config);
  }
  const auto replay = static_cast<std::size_t>(std::llround(spec.replay_fraction * static_cast<double>(total_clips)));
  const std::size_t rest = total_clips - replay;
  require(rest == 0 || !spec.sources.empty(), "build_training_mix: no sources for non-replay slots",
          ErrorKind::config);

  auto size_of = [&](const std::string& id) {
    auto it = corpus_sizes.find(id);
    require(it != corpus_sizes.end() && it->second > 0, "build_training_mix: corpus '" + id + "' is empty or unknown",
            ErrorKind::config);
    return it->second;
  };

  Rng rng(rng_seed);
  std::vector<ScheduledClip> out;
  out.reserve(total_clips);
  auto emit = [&](const std::string& id, std::size_t count) {
    if (count == 0) return;
    const std::size_t n = size_of(id);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      if (i % n == 0) rng.shuffle(order.begin(), order.end());
      out.push_back({id, order[i % n]});
    }
  };

  std::vector<double> weights;
  for (const auto& s : spec.sources) weights.push_back(s.second);
  const auto counts = rest > 0 ? apportion(rest, weights) : std::vector<std::size_t>(weights.size(), 0);
  for (std::size_t i = 0; i < spec.sources.size(); ++i) emit(spec.sources[i].first, counts[i]);
  if (replay > 0) emit(*spec.replay_source, replay);
  rng.shuffle(out.begin(), out.end());
  return out;
}

}  // namespace cmrt::trainer
