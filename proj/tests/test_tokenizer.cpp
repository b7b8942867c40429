#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "cmrt/digest.hpp"
#include "cmrt/tokenizer.hpp"
#include "support.hpp"

using namespace cmrt;
using Catch::Approx;

namespace {

tokenizer::RvqCodec codec_from_rows(std::size_t C, std::size_t D, std::vector<double> rows) {
  TensorMap m;
  m.set("rvq/codebook.0", Tensor({C, D}, std::move(rows)));
  return tokenizer::RvqCodec::from_tensors(m, 0);
}

tokenizer::FeatureMatrix features(std::size_t frames, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  tokenizer::FeatureMatrix f{frames, dim, std::vector<double>(frames * dim)};
  for (double& v : f.values) v = rng.normal();
  return f;
}

}  // namespace

TEST_CASE("codec construction is deterministic with unit-norm codewords", "[tokenizer]") {
  const auto a = tokenizer::init_rvq_codec(3, 16, 8, 42);
  const auto b = tokenizer::init_rvq_codec(3, 16, 8, 42);
  CHECK(a == b);
  CHECK_FALSE(a == tokenizer::init_rvq_codec(3, 16, 8, 43));
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t c = 0; c < 16; ++c) {
      double n2 = 0.0;
      for (double v : a.codeword(k, c)) n2 += v * v;
      CHECK(std::sqrt(n2) == Approx(1.0).margin(1e-6));
    }
  }
  CHECK_THROWS_AS(tokenizer::init_rvq_codec(0, 16, 8, 1), Error);
  CHECK(tokenizer::RvqCodec::from_tensors(a.to_tensors(), 42) == a);
  CHECK(a.to_tensors().contains("rvq/codebook.2"));
}

TEST_CASE("frame features: grid, determinism and silence", "[tokenizer]") {
  const auto one_second = test::noise(24000, 24000, 1);
  const auto f = tokenizer::frame_features(one_second, 16);
  CHECK(f.frames == 75);
  CHECK(f.dim == 16);
  CHECK(tokenizer::frame_features(one_second, 16) == f);

  const dsp::AudioBuffer silence{std::vector<double>(4800, 0.0), 24000};
  tokenizer::FeatureFrontEnd fe(16);
  const auto z = fe(silence);
  const std::vector<double> floor_spec(tokenizer::FeatureFrontEnd::n_bins(),
                                       std::log(tokenizer::FeatureFrontEnd::kLogFloor));
  const auto expect = fe.project(floor_spec);
  for (std::size_t t = 0; t < z.frames; ++t) {
    for (std::size_t d = 0; d < 16; ++d) CHECK(z.row(t)[d] == Approx(expect[d]).margin(1e-9));
  }
}

TEST_CASE("tokenize hand example and tie-breaking", "[tokenizer]") {
  const auto codec = codec_from_rows(2, 2, {1.0, 0.0, 0.0, 1.0});
  tokenizer::FeatureMatrix f{1, 2, {0.9, 0.1}};
  CHECK(tokenizer::tokenize(codec, f).at(0, 0) == 0);
  tokenizer::FeatureMatrix g{1, 2, {0.1, 0.9}};
  CHECK(tokenizer::tokenize(codec, g).at(0, 0) == 1);
  tokenizer::FeatureMatrix tie{1, 2, {0.5, 0.5}};
  CHECK(tokenizer::tokenize(codec, tie).at(0, 0) == 0);
  tokenizer::FeatureMatrix wrong{1, 3, {0.0, 0.0, 0.0}};
  CHECK_THROWS_AS(tokenizer::tokenize(codec, wrong), Error);
}

TEST_CASE("residual quantization matches a direct recomputation", "[tokenizer]") {
  const auto codec = tokenizer::init_rvq_codec(4, 8, 5, 9);
  const auto f = features(50, 5, 10);
  const auto seq = tokenizer::tokenize(codec, f);
  for (std::size_t t = 0; t < f.frames; ++t) {
    std::vector<double> r(f.row(t).begin(), f.row(t).end());
    for (std::size_t k = 0; k < codec.K(); ++k) {
      // Brute-force argmin.
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t c = 0; c < codec.C(); ++c) {
        double d = 0.0;
        for (std::size_t i = 0; i < 5; ++i) d += (r[i] - codec.codeword(k, c)[i]) * (r[i] - codec.codeword(k, c)[i]);
        if (d < best_d) best_d = d, best = c;
      }
      REQUIRE(seq.at(t, k) == static_cast<std::int32_t>(best));
      const auto e = codec.codeword(k, best);
      double rr = 0.0, re = 0.0, ee = 0.0, next = 0.0;
      for (std::size_t i = 0; i < 5; ++i) {
        rr += r[i] * r[i];
        re += r[i] * e[i];
        ee += e[i] * e[i];
        r[i] -= e[i];
        next += r[i] * r[i];
      }
      CHECK(next == Approx(rr - 2.0 * re + ee).margin(1e-12));
    }
  }
}

TEST_CASE("tokenize is a per-frame function", "[tokenizer]") {
  const auto codec = tokenizer::init_rvq_codec(2, 8, 4, 1);
  auto f = features(6, 4, 2);
  std::copy_n(f.values.begin(), 4, f.values.begin() + 4 * 5);  // frame 5 = frame 0
  const auto seq = tokenizer::tokenize(codec, f);
  CHECK(seq.at(5, 0) == seq.at(0, 0));
  CHECK(seq.at(5, 1) == seq.at(0, 1));

  tokenizer::FeatureMatrix rev{6, 4, {}};
  for (std::size_t t = 6; t-- > 0;) rev.values.insert(rev.values.end(), f.row(t).begin(), f.row(t).end());
  const auto rseq = tokenizer::tokenize(codec, rev);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t k = 0; k < 2; ++k) CHECK(rseq.at(5 - t, k) == seq.at(t, k));
  }
}

TEST_CASE("tokenize leaves the codec untouched", "[tokenizer]") {
  const auto codec = tokenizer::init_rvq_codec(2, 8, 4, 1);
  const auto before = digest_tensors(codec.to_tensors());
  (void)tokenizer::tokenize(codec, features(20, 4, 3));
  CHECK(digest_tensors(codec.to_tensors()) == before);
}

TEST_CASE("token histogram counting and additivity", "[tokenizer]") {
  CHECK(tokenizer::token_histogram({}, 2, 4).totals == std::vector<std::uint64_t>{0, 0});

  tokenizer::TokenSequence s{10, 1, 8, std::vector<std::int32_t>(10, 3)};
  const auto h = tokenizer::token_histogram(std::vector{s}, 1, 8);
  CHECK(h.counts[0][3] == 10);
  CHECK(h.totals[0] == 10);

  const auto codec = tokenizer::init_rvq_codec(2, 8, 4, 1);
  const auto a = tokenizer::tokenize(codec, features(30, 4, 4));
  const auto b = tokenizer::tokenize(codec, features(20, 4, 5));
  auto sum = tokenizer::token_histogram(std::vector{a}, 2, 8);
  sum += tokenizer::token_histogram(std::vector{b}, 2, 8);
  CHECK(tokenizer::token_histogram(std::vector{a, b}, 2, 8) == sum);
  for (std::size_t k = 0; k < 2; ++k) {
    std::uint64_t total = 0;
    for (auto c : sum.counts[k]) total += c;
    CHECK(total == sum.totals[k]);
  }

  tokenizer::TokenSequence other{3, 1, 4, std::vector<std::int32_t>(3, 0)};
  CHECK_THROWS_AS(tokenizer::token_histogram(std::vector{s, other}, 1, 8), Error);

  std::ostringstream os;
  tokenizer::write_histogram_csv(os, h);
  CHECK(os.str().rfind("codeword,codebook0\n0,0\n", 0) == 0);
}
