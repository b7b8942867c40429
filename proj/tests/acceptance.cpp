// Acceptance run: one PASS/FAIL line per criterion. Library-level checks run
// in process; the experiments drive the cmrt binary given by --cli.
//
//   acceptance --cli path/to/cmrt --work scratch/dir [--only 1,2,...]

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmrt/checkpoint.hpp"
#include "cmrt/csv.hpp"
#include "cmrt/losses.hpp"
#include "cmrt/merge.hpp"
#include "cmrt/probe/metrics.hpp"
#include "cmrt/similarity.hpp"
#include "cmrt/trainer/trainer.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace cmrt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
  if (!os) throw Error(ErrorKind::io, "cannot write '" + p.string() + "'");
}

// Runs the CLI, appending its output to work/cli.log.
class Cli {
 public:
  Cli(fs::path exe, fs::path work) : exe_(std::move(exe)), work_(std::move(work)) {}

  void operator()(const std::string& args) const {
    const std::string cmd =
        "'" + exe_.string() + "' " + args + " >> '" + (work_ / "cli.log").string() + "' 2>&1";
    {
      std::ofstream log(work_ / "cli.log", std::ios::app);
      log << "$ cmrt " << args << '\n';
    }
    const int rc = std::system(cmd.c_str());
    if (rc != 0) throw Error(ErrorKind::io, "cmrt " + args + " failed (status " + std::to_string(rc) + ")");
  }

  fs::path path(const std::string& rel) const { return work_ / rel; }
  std::string q(const std::string& rel) const { return "'" + path(rel).string() + "'"; }

 private:
  fs::path exe_, work_;
};

// ---------------------------------------------------------------- 1-3

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = test::gradient_check(10.0, 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::size_t n_params = model::init_model(test::tiny_config()).total_elements();
  const bool ok = r.rel_fraction() >= 0.99 && n_params <= 5000 && secs < 120.0;
  return {ok, std::to_string(n_params) + " params, " + fmt(100.0 * r.rel_fraction(), 5) +
                  "% of coordinates within 1e-4 relative, worst " + fmt(r.worst_rel, 3) + ", " + fmt(secs, 3) + " s"};
}

Outcome loss_identities() {
  bool ok = true;
  double worst = 0.0;
  for (std::size_t C : {2u, 4u, 32u}) {
    const std::size_t T = 4, K = 2;
    const std::vector<double> logits(T * K * C, -1.3);
    tokenizer::TokenSequence tgt{T, K, C, {}};
    for (std::size_t i = 0; i < T * K; ++i) tgt.tokens.push_back(static_cast<std::int32_t>((i * 7) % C));
    auto mask = model::MaskSpec::none(T);
    mask.flags[1] = mask.flags[2] = 1;
    const double l = losses::rvq_nce_loss({logits, T, K, C}, tgt, mask);
    worst = std::max(worst, std::abs(l - std::log(static_cast<double>(C))));
  }
  ok = ok && worst <= 1e-6;

  dsp::CqtMatrix target;
  target.frames = 3;
  target.bins = 4;
  for (int i = 0; i < 12; ++i) target.magnitudes.push_back(0.25 * i);
  model::Mat pred(3, 4);
  for (int i = 0; i < 12; ++i) pred(i / 4, i % 4) = 0.25 * i;
  auto all = model::MaskSpec::none(3);
  for (auto& f : all.flags) f = 1;
  const double perfect = losses::cqt_mse_loss(pred, target, all);
  ok = ok && perfect == 0.0;

  model::ForwardOutput out;
  out.frames = 3;
  out.K = 2;
  out.C = 8;
  Rng rng(17);
  for (std::size_t i = 0; i < 3 * 2 * 8; ++i) out.rvq_logits.push_back(rng.normal());
  out.cqt_pred = model::Mat::Zero(3, 4);
  tokenizer::TokenSequence tgt{3, 2, 8, {1, 2, 3, 4, 5, 6}};
  const auto empty = losses::combined_loss(out, tgt, target, model::MaskSpec::none(3), {10.0});
  ok = ok && empty.total == 0.0 && empty.rvq == 0.0 && empty.cqt == 0.0;
  const auto b = losses::combined_loss(out, tgt, target, all, {10.0});
  ok = ok && b.total == 10.0 * b.rvq + b.cqt;

  return {ok, "worst |NCE - ln C| " + fmt(worst, 3) + ", perfect CQT " + fmt(perfect) + ", empty mask " +
                  fmt(empty.total) + ", total - (10 rvq + cqt) = " + fmt(b.total - (10.0 * b.rvq + b.cqt))};
}

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

Outcome schedule_endpoints() {
  trainer::TrainStageConfig s1;
  s1.steps = 2250;
  const auto s2 = trainer::stage2_defaults(s1);
  const std::size_t w1 = trainer::warmup_steps(s1), w2 = trainer::warmup_steps(s2);
  const double errs[] = {
      rel_err(trainer::lr_at_step(w1 - 1, s1), 5e-4),
      rel_err(trainer::lr_at_step(s1.steps - 1, s1), 5e-5),
      rel_err(trainer::lr_at_step(w2 - 1, s2), 5e-5),
      rel_err(trainer::lr_at_step(s2.steps - 1, s2), 5e-6),
  };
  // Decay runs from step w to step steps-1; an odd span has an exact midpoint.
  const double mid1 = rel_err(trainer::lr_at_step(w1 + (s1.steps - w1 - 1) / 2, s1), 0.5 * (5e-4 + 5e-5));
  double worst = mid1;
  for (double e : errs) worst = std::max(worst, e);
  return {worst <= 1e-9, "stage 1 " + fmt(trainer::lr_at_step(w1 - 1, s1)) + " -> " +
                             fmt(trainer::lr_at_step(s1.steps - 1, s1)) + ", stage 2 " +
                             fmt(trainer::lr_at_step(w2 - 1, s2)) + " -> " +
                             fmt(trainer::lr_at_step(s2.steps - 1, s2)) + ", worst relative error " + fmt(worst, 3)};
}

// ---------------------------------------------------------------- 5-10

Outcome replay_proportion() {
  const std::map<std::string, std::size_t> sizes{{"B", 90}, {"A", 90}};
  std::ptrdiff_t worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const trainer::DataMixSpec spec{{{"B", 1.0}}, "A", 0.2};
    const auto mix = trainer::build_training_mix(spec, 1000, seed, sizes);
    const auto replay = std::count_if(mix.begin(), mix.end(), [](const auto& c) { return c.corpus == "A"; });
    worst = std::max(worst, std::abs(static_cast<std::ptrdiff_t>(replay) - 200));
    if (mix.size() != 1000) return {false, "schedule has " + std::to_string(mix.size()) + " clips"};
  }
  return {worst <= 1, "50 schedules of 1000 clips, worst deviation from 200 replay clips: " + std::to_string(worst)};
}

std::int64_t ulps(double a, double b, DType dt) {
  if (dt == DType::f32) {
    return std::abs(static_cast<std::int64_t>(std::bit_cast<std::int32_t>(static_cast<float>(a))) -
                    std::bit_cast<std::int32_t>(static_cast<float>(b)));
  }
  return std::abs(std::bit_cast<std::int64_t>(a) - std::bit_cast<std::int64_t>(b));
}

ckpt::Checkpoint jitter(const ckpt::Checkpoint& base, std::uint64_t seed, const std::string& label, double scale) {
  auto c = base;
  c.stage_label = label;
  Rng rng(seed);
  for (auto& [name, t] : c.params) {
    for (double& v : t.data) v += scale * rng.normal();
    t.round_to_dtype();
  }
  return c;
}

bool bitwise_equal(const Tensor& t, const Tensor& u) {
  if (t.shape != u.shape || t.dtype != u.dtype || t.data.size() != u.data.size()) return false;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(t.data[i]) != std::bit_cast<std::uint64_t>(u.data[i])) return false;
  }
  return true;
}

bool bitwise_equal(const TensorMap& a, const TensorMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    if (!b.contains(name) || !bitwise_equal(t, b.at(name))) return false;
  }
  return true;
}

Outcome merge_algebra(const Cli& cli) {
  std::vector<std::string> notes;
  bool ok = true;

  ckpt::Checkpoint base;
  base.params.set("w", Tensor({1}, {1.0}));
  base.config_digest = "cfg";
  auto a = base, b = base;
  a.params.at("w").data[0] = 1.5;
  b.params.at("w").data[0] = 0.7;
  const auto hand = merge::merge_task_arithmetic(
      {base, {{merge::task_vector(a, base, "a"), 0.2}, {merge::task_vector(b, base, "b"), 0.2}}, {}});
  const double expect = 1.0 + 0.2 * 0.5 + 0.2 * (0.7 - 1.0);
  const double got = hand.params.at("w").data[0];
  ok = ok && got == expect && std::abs(got - 1.04) < 1e-15;
  notes.push_back("scalar example " + fmt(got, 17));

  std::int64_t worst_ulps = 0;
  double worst_avg = 0.0;
  std::int64_t worst_avg_ulps = 0;
  for (DType dt : {DType::f32, DType::f64}) {
    const auto cfg = test::tiny_config();
    auto params = model::init_model(cfg);
    for (auto& [name, t] : params) {
      t.dtype = dt;
      t.round_to_dtype();
    }
    const auto b0 = trainer::make_checkpoint(params, cfg, 0, "base", {0});
    const auto x = jitter(b0, 1, "x", 0.05), y = jitter(b0, 2, "y", 0.05), z = jitter(b0, 3, "z", 0.05);
    const auto tx = merge::task_vector(x, b0), ty = merge::task_vector(y, b0), tz = merge::task_vector(z, b0);

    ok = ok && bitwise_equal(merge::merge_task_arithmetic({b0, {{tx, 0.0}, {ty, 0.0}}, {}}).params, b0.params);

    const auto inv = merge::merge_task_arithmetic({b0, {{tx, 1.0}}, {}});
    for (const auto& [name, t] : x.params) {
      for (std::size_t i = 0; i < t.size(); ++i) worst_ulps = std::max(worst_ulps, ulps(inv.params.at(name).data[i], t.data[i], dt));
    }

    const auto avg = merge::weight_average({x, y, z}, b0);
    const auto shared = merge::merge_task_arithmetic({b0, {{tx, 1.0 / 3}, {ty, 1.0 / 3}, {tz, 1.0 / 3}}, {}});
    for (const auto& [name, t] : avg.params) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double m = shared.params.at(name).data[i];
        // f32 storage cannot resolve 1e-7 relative; one ulp there is 1.19e-7
        if (dt == DType::f32) {
          worst_avg_ulps = std::max(worst_avg_ulps, ulps(m, t.data[i], dt));
        } else {
          worst_avg = std::max(worst_avg, std::abs(m - t.data[i]) / std::max(std::abs(t.data[i]), 1e-300));
        }
      }
    }

    const auto xyz = merge::merge_task_arithmetic({b0, {{tx, 0.3}, {ty, 0.5}, {tz, 0.2}}, {}});
    const auto zyx = merge::merge_task_arithmetic({b0, {{tz, 0.2}, {ty, 0.5}, {tx, 0.3}}, {}});
    ok = ok && bitwise_equal(xyz.params, zyx.params);
  }
  ok = ok && worst_ulps <= 1 && worst_avg <= 1e-7 && worst_avg_ulps <= 1;
  notes.push_back("lambda=1 inverse within " + std::to_string(worst_ulps) + " ulp");
  notes.push_back("1/N vs average " + fmt(worst_avg, 3) + " relative at f64, " + std::to_string(worst_avg_ulps) +
                  " ulp at f32");

  // The CLI merge of two desk checkpoints must agree with the library.
  cli("merge --base " + cli.q("base.cmrt") + " --vector " + cli.q("cpt.cmrt") + ":0.3 --vector " +
      cli.q("aft.cmrt") + ":0.5 --out " + cli.q("merged.cmrt"));
  const auto kb = ckpt::load(cli.path("base.cmrt"));
  const auto lib = merge::merge_task_arithmetic({kb,
                                                 {{merge::task_vector(ckpt::load(cli.path("cpt.cmrt")), kb, "cpt"), 0.3},
                                                  {merge::task_vector(ckpt::load(cli.path("aft.cmrt")), kb, "aft"), 0.5}},
                                                 {}});
  const bool cli_ok = bitwise_equal(ckpt::load(cli.path("merged.cmrt")).params, lib.params);
  ok = ok && cli_ok;
  notes.push_back(cli_ok ? "CLI merge bitwise equal to library" : "CLI merge differs from library");

  std::string d;
  for (const auto& n : notes) d += (d.empty() ? "" : "; ") + n;
  return {ok, d};
}

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  double sum = 0.0, pos = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    double rank = 0.0, hits = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] > s[i] || (s[j] == s[i] && j <= i)) {
        rank += 1.0;
        hits += y[j];
      }
    }
    sum += hits / rank;
    pos += 1.0;
  }
  return sum / pos;
}

Outcome metric_oracles() {
  Rng rng(2024);
  double worst = 0.0;
  std::size_t tied = 0, checked = 0;
  bool ok = true;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t n = 2 + rng.index(63);
    const bool coarse = inst % 2 == 0;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(rng.index(5)) / 4.0 : rng.uniform();
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    tied += std::set<double>(s.begin(), s.end()).size() < n;
    const auto auc = probe::roc_auc(s, y);
    const auto ap = probe::average_precision(s, y);
    if (!auc || !ap) {
      ok = false;
      continue;
    }
    worst = std::max({worst, std::abs(*auc - brute_auc(s, y)), std::abs(*ap - brute_ap(s, y))});
    ++checked;
  }
  ok = ok && checked == 1000 && worst <= 1e-12;
  return {ok, std::to_string(checked) + " instances (" + std::to_string(tied) + " with ties), worst difference " +
                  fmt(worst, 3)};
}

Outcome similarity_bounds(const Cli& cli) {
  using similarity::jsd;
  bool ok = true;
  Rng rng(8);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.index(30);
    std::vector<double> p(n), q(n);
    double sp = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      sp += p[j] = rng.bernoulli(0.3) ? 0.0 : rng.uniform();
      sq += q[j] = rng.bernoulli(0.3) ? 0.0 : rng.uniform();
    }
    if (sp == 0.0) sp = p[0] = 1.0;
    if (sq == 0.0) sq = q[0] = 1.0;
    for (auto& v : p) v /= sp;
    for (auto& v : q) v /= sq;
    const double d = jsd(p, q);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  ok = ok && lo >= 0.0 && hi <= 1.0;
  const double disjoint = jsd(std::vector<double>{0.6, 0.4, 0.0, 0.0}, std::vector<double>{0.0, 0.0, 0.1, 0.9});
  const double hand = jsd(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0});
  ok = ok && disjoint == 1.0 && std::abs(hand - 0.3113) <= 1e-4;

  // A and A2 share culture settings with different seeds; B uses a disjoint pitch set.
  for (const char* id : {"A", "A2", "B"}) {
    cli("tokenize --corpus " + cli.q(std::string(id) + "/manifest.csv") + " --seed 7 --out " +
        cli.q(std::string("hist_") + id + ".csv"));
  }
  bool sym = true, closer = true;
  std::string dists;
  for (const char* metric : {"jsd", "cosine"}) {
    const std::string out = std::string("sim_") + metric + ".csv";
    cli(std::string("similarity --metric ") + metric + " --hist A=" + cli.q("hist_A.csv") + " --hist A2=" +
        cli.q("hist_A2.csv") + " --hist B=" + cli.q("hist_B.csv") + " --out " + cli.q(out));
    std::ifstream is(cli.path(out));
    const auto m = similarity::read_matrix_csv(is, similarity::parse_metric(metric));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) sym = sym && m.values[i][j] == m.values[j][i];
    }
    // ids are sorted: A, A2, B
    closer = closer && m.values[0][1] < m.values[0][2] && m.values[0][1] < m.values[1][2];
    dists += std::string(dists.empty() ? "" : ", ") + metric + " A-A2 " + fmt(m.values[0][1], 4) + " vs A-B " +
             fmt(m.values[0][2], 4);
  }
  ok = ok && sym && closer;
  return {ok, "random JSD in [" + fmt(lo, 3) + ", " + fmt(hi, 3) + "], disjoint " + fmt(disjoint, 17) + ", hand case " +
                  fmt(hand, 6) + ", symmetric " + (sym ? "yes" : "no") + "; " + dists};
}

Outcome cqt_correctness() {
  const double f_min = 32.70;
  const int bpo = 12;
  const std::size_t n_bins = 84;
  bool ok = true;
  std::string misses;
  double worst_lin = 0.0;
  const std::size_t bins[] = {3, 12, 20, 29, 37, 45, 54, 62, 71, 80};
  for (std::size_t bin : bins) {
    const double f = f_min * std::pow(2.0, (static_cast<double>(bin) + 0.2) / bpo);
    const long expect = dsp::cqt_bin_of(f, f_min, bpo);
    const auto tone = dsp::synth_sine(f, 2.0, 24000, 0.5);
    const auto m = dsp::compute_cqt(tone, f_min, bpo, n_bins, 75.0);
    const std::size_t mid = m.frames / 2;
    if (expect != static_cast<long>(bin) || static_cast<long>(m.argmax_bin(mid)) != expect) {
      ok = false;
      misses += " " + fmt(f, 5) + "Hz";
    }
    auto scaled = tone;
    for (double& v : scaled.samples) v *= 3.0;
    const auto m3 = dsp::compute_cqt(scaled, f_min, bpo, n_bins, 75.0);
    for (std::size_t i = 0; i < m.magnitudes.size(); ++i) {
      if (m.magnitudes[i] > 1e-9) worst_lin = std::max(worst_lin, rel_err(m3.magnitudes[i], 3.0 * m.magnitudes[i]));
    }
  }
  ok = ok && worst_lin <= 1e-6;
  return {ok, "10 tones from " + fmt(f_min * std::pow(2.0, 3.2 / bpo), 4) + " to " +
                  fmt(f_min * std::pow(2.0, 80.2 / bpo), 5) + " Hz, argmax " + (misses.empty() ? "all match" : "misses:" + misses) +
                  ", worst scaling error " + fmt(worst_lin, 3)};
}

std::string load_error(const fs::path& p) {
  try {
    (void)ckpt::load(p);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

Outcome checkpoint_fidelity(const fs::path& work) {
  bool ok = true;
  for (DType dt : {DType::f32, DType::f64}) {
    ckpt::Checkpoint ck;
    Rng rng(3);
    std::vector<double> a(40);
    for (double& v : a) v = rng.normal();
    a[0] = -0.0;
    a[1] = std::numeric_limits<double>::denorm_min();
    ck.params.set("enc/w", Tensor({5, 8}, a, dt));
    ck.params.set("s", Tensor({}, {42.5}, dt));
    for (auto& [n, t] : ck.params) t.round_to_dtype();
    ck.config_digest = "d";
    ck.step = 9;
    ck.stage_label = "stage2";
    ck.seed_record = {4, 5};
    const auto p = work / (std::string("rt_") + dtype_name(dt) + ".cmrt");
    ckpt::save(ck, p);
    const auto back = ckpt::load(p);
    ok = ok && back == ck && bitwise_equal(back.params, ck.params) && slurp(p) == ckpt::encode(back);
  }

  const auto good = ckpt::encode(ckpt::load(work / "rt_f64.cmrt"));
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, good.data() + 8, 8);
  const std::size_t payload = (16 + hlen + 63) / 64 * 64;
  auto bad_magic = good;
  bad_magic[1] = 'X';
  auto garbled = good;
  garbled[17] = '#';
  const std::vector<std::pair<std::string, std::string>> cases{
      {bad_magic, "bad magic"},
      {good.substr(0, 12), "truncated header"},
      {garbled, "malformed header"},
      {good.substr(0, payload + 70), "truncated payload at tensor 'enc/w'"},
  };
  std::size_t matched = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto p = work / ("corrupt_" + std::to_string(i) + ".cmrt");
    write_text(p, cases[i].first);
    matched += load_error(p).find(cases[i].second) != std::string::npos;
  }
  ok = ok && matched == cases.size();
  return {ok, "f32/f64 roundtrip bitwise, " + std::to_string(matched) + "/" + std::to_string(cases.size()) +
                  " corruptions rejected with the expected diagnostic"};
}

// ---------------------------------------------------------------- desk experiment

const char* kModel = R"([model]
sample_rate = 4000
frame_stride = 40
conv = 16:8:4, 16:4:2, 32:5:5
d_model = 32
n_layers = 2
n_heads = 4
ffn_dim = 64
d_embed = 8
K = 2
C = 16
cqt_bins = 48
max_frames = 256
[teacher]
codec_dim = 16
cqt_f_min = 65.41
)";

std::string culture_cfg(double reference, const std::string& semitones, int timbre) {
  return "sample_rate = 4000\nscale_reference = " + fmt(reference, 8) + "\nscale_semitones = " + semitones +
         "\ntimbre_seed = " + std::to_string(timbre) +
         "\nsubset_size = 2\nclips = 120\nduration = 2.0\ntest_fraction = 0.25\n";
}

const char* kProbeFlags = " --hidden 32 --epochs 40 --lr 1e-3 --window 2";

struct Desk {
  bool ready = false;
  std::string failure;
  std::map<std::string, std::string> first_run;  // file -> bytes, for the determinism rerun
  double seconds = 0.0;
};

void prepare_desk(const Cli& cli, Desk& d) {
  const auto t0 = std::chrono::steady_clock::now();
  write_text(cli.path("a.cfg"), culture_cfg(220.0, "0, 2, 4, 7, 9", 1));
  write_text(cli.path("b.cfg"), culture_cfg(466.16, "0, 1, 5, 6, 10", 2));
  const std::string corpora = "[corpus]\nA = " + cli.path("A/manifest.csv").string() +
                              "\nB = " + cli.path("B/manifest.csv").string() + "\n";
  write_text(cli.path("base.cfg"), std::string(kModel) + R"([stage]
label = pretrain
steps = 400
groups = all
lr_max = 1e-3
lr_min = 1e-4
batch_clips = 4
accum_steps = 1
clip_seconds = 1.0
replay_fraction = 0
[data]
sources = A:1
eval = A
)" + corpora);
  write_text(cli.path("cpt.cfg"), std::string(kModel) + R"([stage]
steps = 60
lr_max = 2e-4
lr_min = 1e-5
batch_clips = 4
accum_steps = 1
clip_seconds = 1.0
replay_fraction = 0.2
[stage2]
steps = 800
lr_max = 1e-3
lr_min = 5e-5
replay_fraction = 0.2
[data]
sources = B:1
replay = A
)" + corpora);
  write_text(cli.path("aft.cfg"), std::string(kModel) + R"([stage]
label = a_finetune
steps = 150
groups = all
lr_max = 5e-4
lr_min = 5e-5
batch_clips = 4
accum_steps = 1
clip_seconds = 1.0
replay_fraction = 0
[data]
sources = A:1
)" + corpora);

  cli("synth --config " + cli.q("a.cfg") + " --seed 1 --out " + cli.q("A"));
  cli("synth --config " + cli.q("a.cfg") + " --seed 11 --out " + cli.q("A2"));
  cli("synth --config " + cli.q("b.cfg") + " --seed 2 --out " + cli.q("B"));
  cli("pretrain --config " + cli.q("base.cfg") + " --seed 3 --out " + cli.q("base.cmrt"));
  for (const char* f : {"base.cmrt", "base.cmrt.log.csv", "base.cmrt.eval.csv", "base.cmrt.run.json"}) {
    d.first_run[f] = slurp(cli.path(f));
  }
  cli("pretrain --config " + cli.q("cpt.cfg") + " --seed 4 --init " + cli.q("base.cmrt") + " --two-stage --out " +
      cli.q("cpt.cmrt"));
  cli("pretrain --config " + cli.q("aft.cfg") + " --seed 5 --init " + cli.q("base.cmrt") + " --out " +
      cli.q("aft.cmrt"));
  d.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  d.ready = true;
}

Outcome freezing_soundness(const Cli& cli) {
  const auto base = ckpt::load(cli.path("base.cmrt"));
  const auto s1 = ckpt::load(cli.path("cpt.cmrt.stage1"));
  const auto s2 = ckpt::load(cli.path("cpt.cmrt"));
  std::size_t frozen = 0, frozen_moved = 0;
  std::map<model::ParamGroup, bool> moved1, moved2;
  for (const auto& [name, t] : base.params) {
    const auto g = model::group_of(name);
    const bool d1 = !bitwise_equal(t, s1.params.at(name));
    const bool d2 = !bitwise_equal(s1.params.at(name), s2.params.at(name));
    if (g != model::ParamGroup::conv && g != model::ParamGroup::codeword_emb) {
      ++frozen;
      frozen_moved += d1;
    }
    moved1[g] = moved1[g] || d1;
    moved2[g] = moved2[g] || d2;
  }
  std::size_t groups_moved = 0;
  for (const auto& [g, m] : moved2) groups_moved += m;
  const bool ok = frozen > 0 && frozen_moved == 0 && moved1[model::ParamGroup::conv] &&
                  moved1[model::ParamGroup::codeword_emb] && groups_moved == moved2.size() && moved2.size() == 5;
  return {ok, "stage 1 changed " + std::to_string(frozen_moved) + " of " + std::to_string(frozen) +
                  " frozen tensors; stage 2 changed " + std::to_string(groups_moved) + " of " +
                  std::to_string(moved2.size()) + " groups"};
}

std::map<std::string, double> eval_totals(const fs::path& csv_path) {
  const auto t = csv::read(csv_path);
  std::map<std::string, double> out;
  const auto total = t.column("total");
  for (const auto& r : t.rows) out[r[0]] = csv::to_double(r[total]);
  return out;
}

double seeds_mean_roc(const fs::path& p) {
  const auto t = csv::read(p);
  for (const auto& r : t.rows) {
    if (r[0] == "mean") return csv::to_double(r[1]);
  }
  throw Error(ErrorKind::format, p.string() + ": no mean row");
}

Outcome adaptation_experiment(const Cli& cli, const Desk& d) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string corp = " --corpus A=" + cli.q("A/manifest.csv") + " --corpus B=" + cli.q("B/manifest.csv");
  cli("evaluate --ckpt " + cli.q("base.cmrt") + corp + " --seed 9 --out " + cli.q("eval_base.csv"));
  cli("evaluate --ckpt " + cli.q("cpt.cmrt") + corp + " --seed 9 --out " + cli.q("eval_cpt.csv"));
  const auto eb = eval_totals(cli.path("eval_base.csv")), ec = eval_totals(cli.path("eval_cpt.csv"));
  for (const char* ck : {"base", "cpt"}) {
    cli("probe --ckpt " + cli.q(std::string(ck) + ".cmrt") + " --task " + cli.q("B/manifest.csv") + kProbeFlags +
        " --seeds 1,2,3,4,5 --out " + cli.q(std::string("probe_") + ck + ".csv"));
  }
  const double rb = seeds_mean_roc(cli.path("probe_base.csv.seeds.csv"));
  const double rc = seeds_mean_roc(cli.path("probe_cpt.csv.seeds.csv"));
  const double secs = d.seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const bool a = ec.at("B") < eb.at("B");
  const double regress = (ec.at("A") - eb.at("A")) / eb.at("A");
  const bool b = regress <= 0.10;
  const bool c = rc > rb;
  return {a && b && c && secs < 1800.0,
          std::string("(a) ") + (a ? "pass" : "FAIL") + " held-out B loss " + fmt(eb.at("B"), 5) + " -> " +
              fmt(ec.at("B"), 5) + "; (b) " + (b ? "pass" : "FAIL") + " held-out A loss " + fmt(eb.at("A"), 5) +
              " -> " + fmt(ec.at("A"), 5) + " (" + fmt(100.0 * regress, 3) + "%); (c) " + (c ? "pass" : "FAIL") +
              " B-tag probe ROC-AUC " + fmt(rb, 4) + " -> " + fmt(rc, 4) + " (mean of 5 seeds); " +
              fmt(secs, 4) + " s"};
}

std::string sweep_cmd(const Cli& cli, const std::string& out) {
  return "sweep --base " + cli.q("base.cmrt") + " --adapted " + cli.q("cpt.cmrt") + " --adapted " + cli.q("aft.cmrt") +
         " --task A=" + cli.q("A/manifest.csv") + " --task B=" + cli.q("B/manifest.csv") + kProbeFlags +
         " --seed 21 --lambdas 0,0.1,0.2,0.25,0.3,0.5,0.75,1 --svg " + cli.q(out + ".svg") + " --out " + cli.q(out);
}

Outcome sweep_mechanics(const Cli& cli) {
  cli(sweep_cmd(cli, "sweep.csv"));
  cli("report sweep --in " + cli.q("sweep.csv") + " --out " + cli.q("sweep_report.svg"));
  const auto t = csv::read(cli.path("sweep.csv"));
  const std::vector<double> want{0, 0.1, 0.2, 0.25, 0.3, 0.5, 0.75, 1};
  bool complete = t.header == std::vector<std::string>{"lambda", "A", "B"} && t.rows.size() == want.size();
  for (std::size_t i = 0; complete && i < t.rows.size(); ++i) {
    complete = csv::to_double(t.rows[i][0]) == want[i];
    for (std::size_t j = 1; j < 3; ++j) {
      const double v = csv::to_double(t.rows[i][j]);
      complete = complete && std::isfinite(v) && v >= 0.0 && v <= 1.0;
    }
  }
  std::size_t polylines = 0;
  for (const char* svg : {"sweep.csv.svg", "sweep_report.svg"}) {
    const auto s = slurp(cli.path(svg));
    complete = complete && s.rfind("<svg", 0) == 0 && s.find("</svg>") != std::string::npos;
    for (auto pos = s.find("<polyline"); pos != std::string::npos; pos = s.find("<polyline", pos + 1)) ++polylines;
  }
  complete = complete && polylines == 4;

  double worst = 0.0;
  for (const auto& [task, col] : std::vector<std::pair<std::string, std::size_t>>{{"A", 1}, {"B", 2}}) {
    const std::string out = "lambda0_" + task + ".csv";
    cli("probe --ckpt " + cli.q("base.cmrt") + " --task " + cli.q(task + "/manifest.csv") + kProbeFlags +
        " --seed 21 --out " + cli.q(out));
    const auto p = csv::read(cli.path(out));
    const double macro = csv::to_double(p.rows.back()[1]);
    worst = std::max(worst, std::abs(macro - csv::to_double(t.rows[0][col])));
  }
  return {complete && worst <= 1e-9, std::string(complete ? "complete" : "INCOMPLETE") + " 8x2 table and figures (" +
                                         std::to_string(polylines) + " series drawn); lambda=0 row vs base probe: " +
                                         fmt(worst, 3)};
}

Outcome determinism(const Cli& cli, const Desk& d) {
  std::vector<std::string> differ;
  cli("pretrain --config " + cli.q("base.cfg") + " --seed 3 --out " + cli.q("base.cmrt"));
  for (const auto& [f, bytes] : d.first_run) {
    if (slurp(cli.path(f)) != bytes) differ.push_back(f);
  }
  const std::vector<std::string> reports{"sweep.csv", "sweep.csv.svg", "sweep.csv.run.json"};
  std::map<std::string, std::string> before;
  for (const auto& f : reports) before[f] = slurp(cli.path(f));
  cli(sweep_cmd(cli, "sweep.csv"));
  for (const auto& f : reports) {
    if (slurp(cli.path(f)) != before[f]) differ.push_back(f);
  }
  const auto sim = slurp(cli.path("sim_jsd.csv"));
  cli("similarity --metric jsd --hist A=" + cli.q("hist_A.csv") + " --hist A2=" + cli.q("hist_A2.csv") +
      " --hist B=" + cli.q("hist_B.csv") + " --out " + cli.q("sim_jsd.csv"));
  if (slurp(cli.path("sim_jsd.csv")) != sim) differ.push_back("sim_jsd.csv");
  std::string d2;
  for (const auto& f : differ) d2 += " " + f;
  return {differ.empty(), differ.empty() ? "pretrain (checkpoint, log, eval, manifest), sweep and similarity reruns "
                                           "are byte-identical"
                                         : "differs:" + d2};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string exe, work;
  std::vector<int> only;
  app.add_option("--cli", exe, "cmrt binary")->required()->check(CLI::ExistingFile);
  app.add_option("--work", work, "Scratch directory (wiped)")->required();
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(work);
  fs::create_directories(work);
  const Cli cli(fs::absolute(exe), fs::absolute(work));
  Desk desk;

  auto needs_desk = [&]() {
    if (!desk.ready && desk.failure.empty()) {
      try {
        prepare_desk(cli, desk);
      } catch (const std::exception& e) {
        desk.failure = e.what();
      }
    }
    if (!desk.ready) throw Error(ErrorKind::io, "desk setup failed: " + desk.failure);
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"loss identities", loss_identities},
      {"schedule endpoints", schedule_endpoints},
      {"freezing soundness", [&] { needs_desk(); return freezing_soundness(cli); }},
      {"replay proportion", replay_proportion},
      {"merge algebra", [&] { needs_desk(); return merge_algebra(cli); }},
      {"metric oracles", metric_oracles},
      {"similarity bounds", [&] { needs_desk(); return similarity_bounds(cli); }},
      {"CQT correctness", cqt_correctness},
      {"checkpoint fidelity", [&] { return checkpoint_fidelity(cli.path("")); }},
      {"desk adaptation experiment", [&] { needs_desk(); return adaptation_experiment(cli, desk); }},
      {"lambda sweep mechanics", [&] { needs_desk(); return sweep_mechanics(cli); }},
      {"determinism", [&] {
         needs_desk();
         if (!fs::exists(cli.path("sweep.csv"))) (void)sweep_mechanics(cli);
         if (!fs::exists(cli.path("sim_jsd.csv"))) (void)similarity_bounds(cli);
         return determinism(cli, desk);
       }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << n << " [" << criteria[i].first << "]: " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
