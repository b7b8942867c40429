#pragma once

#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cmrt/csv.hpp"
#include "cmrt/error.hpp"
#include "cmrt/tokenizer.hpp"

namespace cmrt::similarity {

enum class Metric { jsd, cosine };

inline const char* metric_name(Metric m) { return m == Metric::jsd ? "jsd" : "cosine"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "jsd") return Metric::jsd;
  if (s == "cosine") return Metric::cosine;
  throw Error(ErrorKind::config, "unknown similarity metric '" + s + "' (expected jsd or cosine)");
}

inline void check_distribution(std::span<const double> p, const char* which) {
  double sum = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, std::string("jsd: ") + which + " has a negative or non-finite entry");
    sum += v;
  }
  require(std::abs(sum - 1.0) <= 1e-9, std::string("jsd: ") + which + " does not sum to 1");
}

/// Jensen-Shannon divergence in bits.
inline double jsd(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), "jsd: distributions must have equal nonzero length", ErrorKind::shape);
  check_distribution(p, "p");
  check_distribution(q, "q");
  double kp = 0.0, kq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kp += p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) kq += q[i] * std::log2(q[i] / m);
  }
  const double d = 0.5 * kp + 0.5 * kq;
  return std::min(1.0, std::max(0.0, d));
}

inline double cosine_distance(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), "cosine_distance: vectors must have equal nonzero length",
          ErrorKind::shape);
  double dot = 0.0, np = 0.0, nq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    dot += p[i] * q[i];
    np += p[i] * p[i];
    nq += q[i] * q[i];
  }
  require(np > 0.0 && nq > 0.0, "cosine_distance: zero vector");
  return 1.0 - dot / (std::sqrt(np) * std::sqrt(nq));
}

/// Normalized counts of codebook k; `smoothing` is an additive pseudocount
/// per codeword (0 keeps raw counts).
inline std::vector<double> codebook_distribution(const tokenizer::TokenHistogram& h, std::size_t k,
                                                 double smoothing = 0.0) {
  require(smoothing >= 0.0 && std::isfinite(smoothing), "similarity: smoothing must be >= 0", ErrorKind::config);
  std::vector<double> p(h.C);
  const double total = static_cast<double>(h.totals[k]) + smoothing * static_cast<double>(h.C);
  for (std::size_t c = 0; c < h.C; ++c) p[c] = (static_cast<double>(h.counts[k][c]) + smoothing) / total;
  return p;
}

/// Per-codebook metric averaged over codebooks.
inline double histogram_distance(const tokenizer::TokenHistogram& a, const tokenizer::TokenHistogram& b, Metric m,
                                 double smoothing = 0.0) {
  require(a.K == b.K && a.C == b.C && a.K > 0, "histogram_distance: (K, C) mismatch", ErrorKind::shape);
  double acc = 0.0;
  for (std::size_t k = 0; k < a.K; ++k) {
    const auto p = codebook_distribution(a, k, smoothing), q = codebook_distribution(b, k, smoothing);
    acc += m == Metric::jsd ? jsd(p, q) : cosine_distance(p, q);
  }
  return acc / static_cast<double>(a.K);
}

struct SimilarityMatrix {
  Metric metric = Metric::jsd;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> values;
};

inline SimilarityMatrix culture_similarity_matrix(const std::map<std::string, tokenizer::TokenHistogram>& hists,
                                                  Metric metric, double smoothing = 0.0) {
  require(!hists.empty(), "culture_similarity_matrix: no corpora");
  const auto& first = hists.begin()->second;
  for (const auto& [id, h] : hists) {
    require(h.K == first.K && h.C == first.C, "culture_similarity_matrix: corpus '" + id + "' has different (K, C)",
            ErrorKind::shape);
    for (std::size_t k = 0; k < h.K; ++k) {
      require(h.totals[k] > 0, "culture_similarity_matrix: corpus '" + id + "' has an empty histogram");
    }
  }
  SimilarityMatrix s;
  s.metric = metric;
  for (const auto& kv : hists) s.ids.push_back(kv.first);
  const std::size_t n = s.ids.size();
  s.values.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      s.values[i][j] = s.values[j][i] = histogram_distance(hists.at(s.ids[i]), hists.at(s.ids[j]), metric, smoothing);
    }
  }
  return s;
}

inline void write_matrix_csv(std::ostream& os, const SimilarityMatrix& s) {
  os << std::setprecision(17) << "corpus";
  for (const auto& id : s.ids) os << ',' << id;
  os << '\n';
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    os << s.ids[i];
    for (double v : s.values[i]) os << ',' << v;
    os << '\n';
  }
}

inline SimilarityMatrix read_matrix_csv(std::istream& is, Metric metric = Metric::jsd) {
  const auto t = csv::parse(is, "similarity matrix");
  SimilarityMatrix s;
  s.metric = metric;
  s.ids.assign(t.header.begin() + 1, t.header.end());
  require(t.rows.size() == s.ids.size(), "similarity matrix: not square", ErrorKind::format);
  for (const auto& row : t.rows) {
    std::vector<double> r;
    for (std::size_t j = 1; j < row.size(); ++j) r.push_back(csv::to_double(row[j], "similarity matrix"));
    s.values.push_back(std::move(r));
  }
  return s;
}

/// Inverse of tokenizer::write_histogram_csv.
inline tokenizer::TokenHistogram read_histogram_csv(std::istream& is) {
  const auto t = csv::parse(is, "histogram");
  require(!t.header.empty() && t.header[0] == "codeword", "histogram: first column must be 'codeword'",
          ErrorKind::format);
  tokenizer::TokenHistogram h(t.header.size() - 1, t.rows.size());
  for (std::size_t c = 0; c < t.rows.size(); ++c) {
    for (std::size_t k = 0; k < h.K; ++k) {
      const double v = csv::to_double(t.rows[c][k + 1], "histogram");
      require(v >= 0.0 && v == std::floor(v), "histogram: counts must be non-negative integers", ErrorKind::format);
      h.counts[k][c] = static_cast<std::uint64_t>(v);
      h.totals[k] += h.counts[k][c];
    }
  }
  return h;
}

}  // namespace cmrt::similarity
