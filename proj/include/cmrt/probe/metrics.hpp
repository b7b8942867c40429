#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmrt/error.hpp"

namespace cmrt::probe {

/// P(score of a random positive > score of a random negative), ties counted
/// one half, via the rank-sum statistic with mid-ranks. Empty when either
/// class is absent.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "roc_auc: scores and labels differ in length", ErrorKind::shape);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t r = i; r < j; ++r) {
      if (labels[order[r]] != 0) {
        pos_rank_sum += mid_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

/// Mean over positives of precision at the positive's rank, ranking by
/// descending score with ties broken by original index. Empty without
/// positives.
inline std::optional<double> average_precision(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "average_precision: scores and labels differ in length", ErrorKind::shape);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

struct MetricsReport {
  std::vector<std::string> tags;
  std::vector<std::optional<double>> roc_auc;  // per tag
  std::vector<std::optional<double>> ap;       // per tag
  double roc_auc_macro = 0.0;
  double ap_macro = 0.0;
  std::size_t tags_used = 0;  // tags with both classes present
};

/// Per-tag metrics over columns of a [items x tags] score matrix; macro
/// values average the tags that have at least one positive and one negative.
inline MetricsReport tag_metrics(const std::vector<std::string>& tags, const std::vector<std::vector<double>>& scores,
                                 const std::vector<std::vector<int>>& labels) {
  require(scores.size() == labels.size(), "tag_metrics: score/label row mismatch", ErrorKind::shape);
  MetricsReport r;
  r.tags = tags;
  std::vector<double> col_s(scores.size());
  std::vector<int> col_l(scores.size());
  for (std::size_t j = 0; j < tags.size(); ++j) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      col_s[i] = scores[i].at(j);
      col_l[i] = labels[i].at(j);
    }
    auto auc = roc_auc(col_s, col_l);
    auto ap = average_precision(col_s, col_l);
    if (!auc) ap.reset();
    if (auc) {
      r.roc_auc_macro += *auc;
      r.ap_macro += *ap;
      ++r.tags_used;
    }
    r.roc_auc.push_back(auc);
    r.ap.push_back(ap);
  }
  if (r.tags_used > 0) {
    r.roc_auc_macro /= static_cast<double>(r.tags_used);
    r.ap_macro /= static_cast<double>(r.tags_used);
  }
  return r;
}

}  // namespace cmrt::probe
