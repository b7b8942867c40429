#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "cmrt/similarity.hpp"
#include "support.hpp"

using namespace cmrt;
using namespace cmrt::similarity;
using Catch::Approx;

namespace {

using V = std::vector<double>;

// Direct KL sums in extended precision.
long double jsd_oracle(const V& p, const V& q) {
  long double kp = 0.0L, kq = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double m = 0.5L * (static_cast<long double>(p[i]) + q[i]);
    if (p[i] > 0) kp += p[i] * std::log2(static_cast<long double>(p[i]) / m);
    if (q[i] > 0) kq += q[i] * std::log2(static_cast<long double>(q[i]) / m);
  }
  return 0.5L * kp + 0.5L * kq;
}

V random_distribution(Rng& rng, std::size_t n, double zero_prob) {
  V p(n);
  double s = 0.0;
  for (double& v : p) s += (v = rng.bernoulli(zero_prob) ? 0.0 : rng.uniform());
  if (s == 0.0) {
    p[0] = 1.0;
    s = 1.0;
  }
  for (double& v : p) v /= s;
  return p;
}

tokenizer::TokenHistogram hist(std::vector<std::vector<std::uint64_t>> counts) {
  tokenizer::TokenHistogram h(counts.size(), counts.front().size());
  for (std::size_t k = 0; k < h.K; ++k) {
    h.counts[k] = counts[k];
    for (auto c : counts[k]) h.totals[k] += c;
  }
  return h;
}

}  // namespace

TEST_CASE("JSD worked examples", "[similarity]") {
  CHECK(jsd(V{0.3, 0.7}, V{0.3, 0.7}) == 0.0);
  CHECK(jsd(V{1.0, 0.0}, V{0.0, 1.0}) == 1.0);
  const double half = jsd(V{0.5, 0.5}, V{1.0, 0.0});
  CHECK(half == Approx(static_cast<double>(jsd_oracle({0.5, 0.5}, {1.0, 0.0}))).margin(1e-15));
  CHECK(half == Approx(0.3113).margin(1e-4));
}

TEST_CASE("JSD input validation", "[similarity]") {
  CHECK_THROWS_AS(jsd(V{0.5, 0.6}, V{0.5, 0.5}), Error);
  CHECK_THROWS_AS(jsd(V{1.5, -0.5}, V{0.5, 0.5}), Error);
  CHECK_THROWS_AS(jsd(V{1.0}, V{0.5, 0.5}), Error);
  CHECK_THROWS_AS(jsd(V{}, V{}), Error);
  CHECK_THROWS_AS(jsd(V{NAN, 1.0}, V{0.5, 0.5}), Error);
}

TEST_CASE("JSD properties on random distributions", "[similarity]") {
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(40);
    const auto p = random_distribution(rng, n, 0.3), q = random_distribution(rng, n, 0.3);
    const double d = jsd(p, q);
    REQUIRE(d >= 0.0);
    REQUIRE(d <= 1.0);
    REQUIRE(d == jsd(q, p));
    REQUIRE(jsd(p, p) <= 1e-12);
    REQUIRE(d == Approx(static_cast<double>(jsd_oracle(p, q))).margin(1e-12));
    if (p != q) REQUIRE(d > 0.0);
  }
}

TEST_CASE("cosine distance", "[similarity]") {
  CHECK(cosine_distance(V{0.2, 0.8}, V{0.2, 0.8}) == Approx(0.0).margin(1e-15));
  CHECK(cosine_distance(V{1.0, 0.0}, V{0.0, 1.0}) == 1.0);
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(cosine_distance(V{r, r}, V{1.0, 0.0}) == Approx(1.0 - 1.0 / std::sqrt(2.0)).margin(1e-15));
  CHECK(cosine_distance(V{r, r}, V{1.0, 0.0}) == Approx(0.2929).margin(1e-4));
  CHECK_THROWS_AS(cosine_distance(V{0.0, 0.0}, V{1.0, 0.0}), Error);
  CHECK_THROWS_AS(cosine_distance(V{1.0}, V{1.0, 0.0}), Error);

  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_distribution(rng, 12, 0.4), q = random_distribution(rng, 12, 0.4);
    const double d = cosine_distance(p, q);
    REQUIRE(d >= -1e-15);
    REQUIRE(d <= 1.0 + 1e-15);
    REQUIRE(d == cosine_distance(q, p));
  }
}

TEST_CASE("similarity matrix", "[similarity]") {
  std::map<std::string, tokenizer::TokenHistogram> h{
      {"a", hist({{5, 3, 0, 2}, {1, 1, 1, 1}})},
      {"b", hist({{0, 3, 6, 1}, {4, 0, 0, 0}})},
      {"c", hist({{1, 1, 1, 7}, {2, 2, 0, 6}})},
  };
  for (Metric m : {Metric::jsd, Metric::cosine}) {
    const auto s = culture_similarity_matrix(h, m);
    REQUIRE(s.ids == std::vector<std::string>{"a", "b", "c"});
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(s.values[i][i] == 0.0);
      for (std::size_t j = 0; j < 3; ++j) CHECK(s.values[i][j] == s.values[j][i]);
    }
    // Average of per-codebook values computed by hand.
    auto metric = [&](const V& p, const V& q) { return m == Metric::jsd ? jsd(p, q) : cosine_distance(p, q); };
    const double k0 = metric(V{0.5, 0.3, 0.0, 0.2}, V{0.0, 0.3, 0.6, 0.1});
    const double k1 = metric(V{0.25, 0.25, 0.25, 0.25}, V{1.0, 0.0, 0.0, 0.0});
    CHECK(s.values[0][1] == Approx((k0 + k1) / 2.0).margin(1e-12));
  }

  auto empty = h;
  empty["d"] = tokenizer::TokenHistogram(2, 4);
  try {
    culture_similarity_matrix(empty, Metric::jsd);
    FAIL("empty histogram accepted");
  } catch (const Error& e) {
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("'d'"));
  }
  auto mixed = h;
  mixed["e"] = hist({{1, 1, 1}});
  CHECK_THROWS_AS(culture_similarity_matrix(mixed, Metric::jsd), Error);
  CHECK_THROWS_AS(culture_similarity_matrix({}, Metric::jsd), Error);
}

TEST_CASE("smoothing is off by default and bounded when on", "[similarity]") {
  const auto a = hist({{4, 0}}), b = hist({{0, 4}});
  CHECK(histogram_distance(a, b, Metric::jsd) == 1.0);
  const double smoothed = histogram_distance(a, b, Metric::jsd, 1.0);
  CHECK(smoothed > 0.0);
  CHECK(smoothed < 1.0);
  CHECK(codebook_distribution(a, 0, 1.0) == V{5.0 / 6.0, 1.0 / 6.0});
  CHECK_THROWS_AS(codebook_distribution(a, 0, -1.0), Error);
}

TEST_CASE("matrix and histogram CSV round trips", "[similarity]") {
  std::map<std::string, tokenizer::TokenHistogram> h{{"x", hist({{3, 1, 0}, {0, 2, 2}})},
                                                     {"y", hist({{1, 1, 1}, {5, 0, 1}})}};
  const auto s = culture_similarity_matrix(h, Metric::jsd);
  std::stringstream ms;
  write_matrix_csv(ms, s);
  const auto back = read_matrix_csv(ms);
  CHECK(back.ids == s.ids);
  CHECK(back.values == s.values);

  std::stringstream hs;
  tokenizer::write_histogram_csv(hs, h.at("x"));
  CHECK(read_histogram_csv(hs) == h.at("x"));

  std::stringstream bad("codeword,k0\n0,1.5\n");
  CHECK_THROWS_AS(read_histogram_csv(bad), Error);
  CHECK(parse_metric("cosine") == Metric::cosine);
  CHECK_THROWS_AS(parse_metric("euclid"), Error);
}

namespace {

tokenizer::TokenHistogram corpus_histogram(const dsp::SynthCultureSpec& base, std::uint64_t seed,
                                           const tokenizer::RvqCodec& codec) {
  std::vector<tokenizer::TokenSequence> seqs;
  for (std::uint64_t i = 0; i < 4; ++i) {
    auto spec = base;
    spec.rng_seed = derive_seed(seed, i);
    const auto clip = dsp::synth_culture_clip(spec, 2.0);
    seqs.push_back(tokenizer::tokenize(codec, tokenizer::frame_features(clip, codec.D())));
  }
  return tokenizer::token_histogram(seqs, codec.K(), codec.C());
}

}  // namespace

TEST_CASE("same-culture corpora are closer than disjoint-pitch corpora", "[similarity]") {
  const tokenizer::RvqCodec codec(2, 32, 16, 3);
  dsp::SynthCultureSpec a;
  a.pitch_set = dsp::scale_from_semitones(110.0, {0, 3, 5, 7, 10});
  a.timbre_seed = 1;
  dsp::SynthCultureSpec b = a;
  b.pitch_set = dsp::scale_from_semitones(880.0, {0, 2, 4, 7, 9});
  b.timbre_seed = 2;
  std::map<std::string, tokenizer::TokenHistogram> h{
      {"a1", corpus_histogram(a, 100, codec)},
      {"a2", corpus_histogram(a, 200, codec)},
      {"b", corpus_histogram(b, 300, codec)},
  };
  for (Metric m : {Metric::jsd, Metric::cosine}) {
    const auto s = culture_similarity_matrix(h, m);
    CHECK(s.values[0][1] < s.values[0][2]);
    CHECK(s.values[0][1] < s.values[1][2]);
  }
}
