#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmrt/checkpoint.hpp"
#include "cmrt/config_file.hpp"
#include "cmrt/csv.hpp"
#include "cmrt/dsp.hpp"
#include "cmrt/merge.hpp"
#include "cmrt/probe/probe.hpp"
#include "cmrt/run_config.hpp"
#include "cmrt/run_manifest.hpp"
#include "cmrt/similarity.hpp"
#include "cmrt/svg.hpp"
#include "cmrt/tokenizer.hpp"
#include "cmrt/trainer/trainer.hpp"

namespace fs = std::filesystem;
using namespace cmrt;

namespace {

// Exit codes; 2 is reserved for usage errors.
int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::precondition: return 3;
    case ErrorKind::shape: return 4;
    case ErrorKind::format: return 5;
    case ErrorKind::io: return 6;
    case ErrorKind::config: return 7;
    case ErrorKind::numeric: return 8;
  }
  return 1;
}

/// Options shared by every subcommand.
struct Common {
  std::string config;
  std::vector<std::string> sets;  // key=value overrides
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Config file (key = value, [section] prefixes)")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "Override a config key: section.key=value (repeatable)");
  app->add_option("--seed", c.seed, "Global seed; defaults to $CMRT_SEED, else 0");
}

ConfigFile load_config(const Common& c) {
  ConfigFile cf = c.config.empty() ? ConfigFile{} : ConfigFile::load(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::config, "--set expects key=value, got '" + s + "'");
    cf.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return cf;
}

std::uint64_t global_seed(const Common& c) { return c.seed ? *c.seed : run::env_seed(); }

run::RunManifest start_manifest(const std::string& command, const std::vector<std::string>& args, const Common& c) {
  run::RunManifest m;
  m.command = command;
  m.args = args;
  m.config_path = c.config;
  return m;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot write '" + p.string() + "'");
  return os;
}

fs::path sidecar(const fs::path& out, const std::string& suffix) { return fs::path(out.string() + suffix); }

/// "a=b" into (a, b).
std::pair<std::string, std::string> split_pair(const std::string& s, char sep, const std::string& what) {
  const auto pos = s.rfind(sep);
  if (pos == std::string::npos || pos == 0 || pos + 1 == s.size()) {
    throw Error(ErrorKind::config, what + ": expected two fields separated by '" + std::string(1, sep) + "', got '" +
                                       s + "'");
  }
  return {s.substr(0, pos), s.substr(pos + 1)};
}

std::vector<dsp::AudioBuffer> split_audio(const probe::TaskDataset& ds, std::optional<probe::Split> split,
                                          int sample_rate) {
  std::vector<dsp::AudioBuffer> out;
  for (const auto& c : ds.clips) {
    if (split && c.split != *split) continue;
    out.push_back(c.audio.sample_rate == sample_rate ? c.audio : dsp::resample(c.audio, sample_rate));
  }
  return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  Common common;
  std::string out;
};

int cmd_synth(const SynthOpts& o, const std::vector<std::string>& args) {
  const ConfigFile cf = load_config(o.common);
  run::CorpusPlan defaults;
  defaults.culture.rng_seed = global_seed(o.common);
  const run::CorpusPlan plan = run::corpus_plan(cf, "", defaults);
  cf.reject_unused(o.common.config.empty() ? "synth" : o.common.config);

  const fs::path dir(o.out);
  fs::create_directories(dir / "clips");
  const std::size_t n_test = static_cast<std::size_t>(std::llround(plan.test_fraction * plan.clips));
  const std::size_t n_valid = static_cast<std::size_t>(std::llround(plan.valid_fraction * plan.clips));
  require(n_test + n_valid < plan.clips, "synth: splits leave no training clips", ErrorKind::config);

  probe::TaskDataset ds;
  for (std::size_t p = 0; p < plan.culture.pitch_set.size(); ++p) ds.tags.push_back("pitch" + std::to_string(p));
  // Tags sort lexicographically on reload; keep vocabulary order identical.
  std::sort(ds.tags.begin(), ds.tags.end());
  auto m = start_manifest("synth", args, o.common);
  for (std::size_t i = 0; i < plan.clips; ++i) {
    auto spec = plan.culture;
    spec.rng_seed = derive_seed(plan.culture.rng_seed, i);
    const auto clip = dsp::synth_culture_clip_tagged(spec, plan.duration);
    probe::TaggedClip tc;
    std::ostringstream name;
    name << "clips/clip_" << std::setw(4) << std::setfill('0') << i << ".wav";
    tc.id = name.str();
    tc.split = i >= plan.clips - n_test               ? probe::Split::test
               : i >= plan.clips - n_test - n_valid ? probe::Split::valid
                                                      : probe::Split::train;
    tc.labels.assign(ds.tags.size(), 0);
    for (std::size_t p = 0; p < clip.pitch_present.size(); ++p) {
      if (!clip.pitch_present[p]) continue;
      const auto tag = "pitch" + std::to_string(p);
      tc.labels[static_cast<std::size_t>(std::find(ds.tags.begin(), ds.tags.end(), tag) - ds.tags.begin())] = 1;
    }
    dsp::write_wav(dir / tc.id, clip.audio, dsp::WavFormat::float32);
    m.artifact_paths.push_back(dir / tc.id);
    ds.clips.push_back(std::move(tc));
  }
  {
    auto os = open_out(dir / "manifest.csv");
    probe::write_manifest(os, ds);
  }
  m.artifact_paths.insert(m.artifact_paths.begin(), dir / "manifest.csv");
  m.effective = run::to_json(plan);
  m.seed_record = {plan.culture.rng_seed, plan.culture.timbre_seed};
  run::write_run_manifest(dir / "run.json", m);
  std::cout << "synth: wrote " << plan.clips << " clips (" << n_test << " test) to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// tokenize

struct TokenizeOpts {
  Common common;
  std::string corpus, out, split = "all";
  std::size_t K = 2, C = 32, dim = 16, hop = dsp::kDefaultHop;
  std::optional<std::uint64_t> codec_seed;
};

int cmd_tokenize(const TokenizeOpts& o, const std::vector<std::string>& args) {
  const auto ds = probe::load_manifest(o.corpus);
  const std::uint64_t seed = o.codec_seed ? *o.codec_seed : global_seed(o.common);
  const tokenizer::RvqCodec codec(o.K, o.C, o.dim, seed);
  tokenizer::FeatureFrontEnd front(o.dim, o.hop);
  std::optional<probe::Split> split;
  if (o.split != "all") split = probe::parse_split(o.split);
  std::vector<tokenizer::TokenSequence> seqs;
  for (const auto& c : ds.clips) {
    if (split && c.split != *split) continue;
    seqs.push_back(tokenizer::tokenize(codec, front(c.audio)));
  }
  require(!seqs.empty(), "tokenize: no clips selected from '" + o.corpus + "'", ErrorKind::config);
  const auto h = tokenizer::token_histogram(seqs, o.K, o.C);
  {
    auto os = open_out(o.out);
    tokenizer::write_histogram_csv(os, h);
  }
  auto m = start_manifest("tokenize", args, o.common);
  m.effective = {{"corpus", o.corpus}, {"split", o.split}, {"K", o.K}, {"C", o.C},
                 {"dim", o.dim},       {"hop", o.hop},     {"codec_seed", seed}};
  m.seed_record = {seed};
  m.artifact_paths = {o.out};
  run::write_run_manifest(sidecar(o.out, ".run.json"), m);
  std::cout << "tokenize: " << seqs.size() << " clips, " << h.totals[0] << " frames -> " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// similarity

struct SimilarityOpts {
  Common common;
  std::vector<std::string> hists;
  std::string metric = "jsd", out;
  double smoothing = 0.0;
};

int cmd_similarity(const SimilarityOpts& o, const std::vector<std::string>& args) {
  std::map<std::string, tokenizer::TokenHistogram> hists;
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& spec : o.hists) {
    const auto [id, path] = split_pair(spec, '=', "--hist");
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::io, "cannot open histogram '" + path + "'");
    require(!hists.count(id), "similarity: duplicate corpus id '" + id + "'", ErrorKind::config);
    hists[id] = similarity::read_histogram_csv(is);
    inputs[id] = path;
  }
  const auto metric = similarity::parse_metric(o.metric);
  const auto s = similarity::culture_similarity_matrix(hists, metric, o.smoothing);
  {
    auto os = open_out(o.out);
    similarity::write_matrix_csv(os, s);
  }
  auto m = start_manifest("similarity", args, o.common);
  m.effective = {{"histograms", inputs}, {"metric", o.metric}, {"smoothing", o.smoothing}};
  m.artifact_paths = {o.out};
  run::write_run_manifest(sidecar(o.out, ".run.json"), m);
  std::cout << "similarity: " << s.ids.size() << "x" << s.ids.size() << " " << o.metric << " matrix -> " << o.out
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainOpts {
  Common common;
  std::string init, out;
  bool stage2 = false, two_stage = false;
};

int cmd_pretrain(const PretrainOpts& o, const std::vector<std::string>& args) {
  require(!(o.stage2 && o.two_stage), "pretrain: --stage2 and --two-stage are exclusive", ErrorKind::config);
  const ConfigFile cf = load_config(o.common);
  const std::uint64_t seed = global_seed(o.common);

  // Model: from the init checkpoint, else from [model].
  std::optional<ckpt::Checkpoint> init;
  model::ModelConfig mcfg;
  model::ModelConfig model_defaults;
  model_defaults.rng_seed = seed;
  if (!o.init.empty()) {
    init = ckpt::load(o.init);
    mcfg = trainer::config_of(*init);
    require(run::model_config(cf, "model", mcfg) == mcfg,
            "pretrain: [model] settings disagree with the --init checkpoint", ErrorKind::config);
  } else {
    require(!o.stage2, "pretrain: --stage2 needs --init", ErrorKind::config);
    mcfg = run::model_config(cf, "model", model_defaults);
  }

  run::TeacherSettings tdefaults;
  tdefaults.codec_seed = seed;
  if (init && init->extra.contains("teacher")) tdefaults = init->extra.at("teacher").get<run::TeacherSettings>();
  const run::TeacherSettings tset = run::teacher_settings(cf, "teacher", tdefaults);
  if (init && init->extra.contains("teacher")) {
    require(tset == tdefaults, "pretrain: [teacher] settings differ from those recorded in the --init checkpoint",
            ErrorKind::config);
  }
  const trainer::Teachers teachers = run::make_teachers(tset, mcfg);

  trainer::TrainStageConfig s1_defaults;
  s1_defaults.rng_seed = seed;
  const auto s1 = run::stage_config(cf, "stage", s1_defaults);
  const auto s2 = run::stage_config(cf, "stage2", trainer::stage2_defaults(s1));
  require(o.two_stage || !(o.stage2 ? s2 : s1).carry_moments,
          "pretrain: carry_moments needs --two-stage (moments are not stored in checkpoints)", ErrorKind::config);

  // Data.
  std::map<std::string, std::string> corpus_paths;
  for (const auto& [k, v] : cf.values()) {
    if (k.rfind("corpus.", 0) == 0) corpus_paths[k.substr(7)] = cf.str(k, "");
  }
  require(!corpus_paths.empty(), "pretrain: no [corpus] entries", ErrorKind::config);
  trainer::DataMixSpec mix;
  for (const auto& item : cf.list("data.sources")) {
    const auto [id, w] = split_pair(item, ':', "data.sources");
    mix.sources.emplace_back(id, csv::to_double(w, "data.sources weight"));
  }
  require(!mix.sources.empty(), "pretrain: data.sources is empty", ErrorKind::config);
  if (cf.has("data.replay")) mix.replay_source = cf.str("data.replay", "");
  const std::string eval_id = cf.str("data.eval", "");
  const std::uint64_t eval_mask_seed = run::detail::seed_key(cf, "data.eval_mask_seed", seed);
  cf.reject_unused(o.common.config.empty() ? "pretrain" : o.common.config);

  trainer::Corpora corpora;
  std::optional<trainer::EvalSet> eval;
  auto need = [&](const std::string& id) -> const std::string& {
    auto it = corpus_paths.find(id);
    require(it != corpus_paths.end(), "pretrain: corpus '" + id + "' has no [corpus] entry", ErrorKind::config);
    return it->second;
  };
  std::set<std::string> used;
  for (const auto& [id, w] : mix.sources) used.insert(id);
  if (mix.replay_source) used.insert(*mix.replay_source);
  for (const auto& id : used) {
    corpora[id] = split_audio(probe::load_manifest(need(id)), probe::Split::train, mcfg.sample_rate);
    require(!corpora[id].empty(), "pretrain: corpus '" + id + "' has no train clips", ErrorKind::config);
  }
  if (!eval_id.empty()) {
    eval = trainer::EvalSet{split_audio(probe::load_manifest(need(eval_id)), probe::Split::test, mcfg.sample_rate),
                            eval_mask_seed};
    require(!eval->clips.empty(), "pretrain: eval corpus '" + eval_id + "' has no test clips", ErrorKind::config);
  }

  if (!init) {
    init = trainer::make_checkpoint(model::init_model(mcfg), mcfg, 0, "init", {mcfg.rng_seed});
  }
  auto mix_for = [&](const trainer::TrainStageConfig& s) {
    auto m = mix;
    m.replay_fraction = s.replay_fraction;
    return m;
  };

  const fs::path out(o.out);
  auto m = start_manifest("pretrain", args, o.common);
  m.effective = {{"model", mcfg},
                 {"teacher", tset},
                 {"stage", run::to_json(s1)},
                 {"stage2", run::to_json(s2)},
                 {"mode", o.two_stage ? "two_stage" : o.stage2 ? "stage2" : "stage1"},
                 {"init", o.init},
                 {"corpora", corpus_paths},
                 {"eval", eval_id},
                 {"eval_mask_seed", eval_mask_seed}};

  auto finish = [&](trainer::StageResult& r, const fs::path& path) {
    r.checkpoint.extra["teacher"] = tset;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    ckpt::save(r.checkpoint, path);
    {
      auto os = open_out(sidecar(path, ".log.csv"));
      trainer::write_log_csv(os, r.log);
    }
    m.artifact_paths.push_back(path);
    m.artifact_paths.push_back(sidecar(path, ".log.csv"));
    if (eval) {
      auto os = open_out(sidecar(path, ".eval.csv"));
      trainer::write_eval_csv(os, r.eval_log);
      m.artifact_paths.push_back(sidecar(path, ".eval.csv"));
    }
    const auto& last = r.log.back();
    std::cout << "pretrain: " << r.checkpoint.stage_label << " " << r.log.size() << " steps, final loss "
              << last.total << " -> " << path.string() << "\n";
  };

  const trainer::EvalSet* ev = eval ? &*eval : nullptr;
  if (o.two_stage) {
    auto r = trainer::run_two_stage(*init, mcfg, s1, s2, mix_for(s1), mix_for(s2), corpora, teachers, ev);
    finish(r.stage1, sidecar(out, ".stage1"));
    finish(r.stage2, out);
    m.seed_record = r.stage2.checkpoint.seed_record;
  } else {
    const auto& s = o.stage2 ? s2 : s1;
    auto r = trainer::run_stage(*init, mcfg, s, mix_for(s), corpora, teachers, ev);
    finish(r, out);
    m.seed_record = r.checkpoint.seed_record;
  }
  run::write_run_manifest(sidecar(out, ".run.json"), m);
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate: held-out masked-prediction loss with fixed masks

struct EvaluateOpts {
  Common common;
  std::string ckpt, split = "test", out;
  std::vector<std::string> corpora;
  double alpha = 10.0;
  std::optional<std::uint64_t> mask_seed;
};

int cmd_evaluate(const EvaluateOpts& o, const std::vector<std::string>& args) {
  const auto ck = ckpt::load(o.ckpt);
  const auto mcfg = trainer::config_of(ck);
  require(ck.extra.contains("teacher"), "evaluate: checkpoint records no teacher settings", ErrorKind::format);
  const auto tset = ck.extra.at("teacher").get<run::TeacherSettings>();
  const auto teachers = run::make_teachers(tset, mcfg);
  const std::uint64_t mask_seed = o.mask_seed ? *o.mask_seed : global_seed(o.common);
  std::optional<probe::Split> split;
  if (o.split != "all") split = probe::parse_split(o.split);

  auto os = open_out(o.out);
  os.precision(17);
  os << "corpus,clips,rvq,cqt,total\n";
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& spec : o.corpora) {
    const auto [id, path] = split_pair(spec, '=', "--corpus");
    const auto clips = split_audio(probe::load_manifest(path), split, mcfg.sample_rate);
    require(!clips.empty(), "evaluate: corpus '" + id + "' has no " + o.split + " clips", ErrorKind::config);
    const auto b = trainer::evaluate_loss(ck.params, mcfg, clips, teachers, o.alpha, mask_seed);
    os << id << ',' << clips.size() << ',' << b.rvq << ',' << b.cqt << ',' << b.total << '\n';
    std::cout << "evaluate: " << id << " total " << b.total << " (rvq " << b.rvq << ", cqt " << b.cqt << ")\n";
    inputs[id] = path;
  }
  os.close();
  auto m = start_manifest("evaluate", args, o.common);
  m.effective = {{"ckpt", o.ckpt}, {"corpora", inputs}, {"split", o.split}, {"alpha", o.alpha},
                 {"mask_seed", mask_seed}};
  m.seed_record = {mask_seed};
  m.artifact_paths = {o.out};
  run::write_run_manifest(sidecar(o.out, ".run.json"), m);
  return 0;
}

// ---------------------------------------------------------------------------
// merge

struct MergeOpts {
  Common common;
  std::string base, out;
  std::vector<std::string> vectors, averages, exclude;
};

int cmd_merge(const MergeOpts& o, const std::vector<std::string>& args) {
  require(o.vectors.empty() != o.averages.empty(), "merge: give either --vector or --average entries",
          ErrorKind::config);
  const auto base = ckpt::load(o.base);
  ckpt::Checkpoint merged;
  nlohmann::json sources = nlohmann::json::array();
  if (!o.vectors.empty()) {
    merge::MergeSpec spec{base, {}, {o.exclude.begin(), o.exclude.end()}};
    for (const auto& v : o.vectors) {
      const auto [path, lambda] = split_pair(v, ':', "--vector");
      const double l = csv::to_double(lambda, "--vector lambda");
      spec.vectors.emplace_back(merge::task_vector(ckpt::load(path), base, fs::path(path).stem().string()), l);
      sources.push_back({{"path", path}, {"lambda", l}});
    }
    merged = merge::merge_task_arithmetic(spec);
  } else {
    require(o.exclude.empty(), "merge: --exclude applies to task arithmetic only", ErrorKind::config);
    std::vector<ckpt::Checkpoint> cks;
    for (const auto& p : o.averages) {
      cks.push_back(ckpt::load(p));
      sources.push_back({{"path", p}});
    }
    merged = merge::weight_average(cks, base);
  }
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  ckpt::save(merged, out);
  auto m = start_manifest("merge", args, o.common);
  m.effective = {{"base", o.base},
                 {"method", o.vectors.empty() ? "weight_average" : "task_arithmetic"},
                 {"sources", sources},
                 {"exclude", o.exclude}};
  m.seed_record = merged.seed_record;
  m.artifact_paths = {out};
  run::write_run_manifest(sidecar(out, ".run.json"), m);
  std::cout << "merge: " << sources.size() << " sources -> " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// probe and sweep

struct ProbeFlags {
  std::optional<std::string> hidden, layer, epochs, lr, batch, weight_decay, window, max_duration;
};

void add_probe_flags(CLI::App* app, ProbeFlags& f) {
  app->add_option("--hidden", f.hidden, "Probe hidden width (probe.hidden_dim)");
  app->add_option("--layer", f.layer, "Feature layer: last, weighted or an index (probe.layer)");
  app->add_option("--epochs", f.epochs, "Probe epochs (probe.epochs)");
  app->add_option("--lr", f.lr, "Probe learning rate (probe.lr)");
  app->add_option("--batch", f.batch, "Probe batch size (probe.batch)");
  app->add_option("--weight-decay", f.weight_decay, "Probe weight decay (probe.weight_decay)");
  app->add_option("--window", f.window, "Window length in seconds (probe.window_seconds)");
  app->add_option("--max-duration", f.max_duration, "Truncate recordings, seconds; 0 keeps all (probe.max_duration)");
}

probe::ProbeConfig probe_settings(ConfigFile& cf, const ProbeFlags& f, std::uint64_t seed) {
  auto put = [&](const std::optional<std::string>& v, const char* key) {
    if (v) cf.set(std::string("probe.") + key, *v);
  };
  put(f.hidden, "hidden_dim");
  put(f.layer, "layer");
  put(f.epochs, "epochs");
  put(f.lr, "lr");
  put(f.batch, "batch");
  put(f.weight_decay, "weight_decay");
  put(f.window, "window_seconds");
  put(f.max_duration, "max_duration");
  probe::ProbeConfig defaults;
  defaults.rng_seed = seed;
  return run::probe_config(cf, "probe", defaults);
}

struct ProbeOpts {
  Common common;
  ProbeFlags flags;
  std::string ckpt, task, out;
  std::vector<std::uint64_t> seeds;
};

int cmd_probe(const ProbeOpts& o, const std::vector<std::string>& args) {
  ConfigFile cf = load_config(o.common);
  const auto pc = probe_settings(cf, o.flags, global_seed(o.common));
  cf.reject_unused(o.common.config.empty() ? "probe" : o.common.config);
  const auto ck = ckpt::load(o.ckpt);
  const auto mcfg = trainer::config_of(ck);
  auto ds = probe::load_manifest(o.task);
  for (auto& c : ds.clips) {
    if (c.audio.sample_rate != mcfg.sample_rate) c.audio = dsp::resample(c.audio, mcfg.sample_rate);
  }
  const std::vector<std::uint64_t> seeds = o.seeds.empty() ? std::vector<std::uint64_t>{pc.rng_seed} : o.seeds;

  auto m = start_manifest("probe", args, o.common);
  m.effective = {{"ckpt", o.ckpt}, {"task", o.task}, {"probe", run::to_json(pc)}, {"seeds", seeds}};
  m.seed_record = seeds;
  auto cfg = pc;
  cfg.rng_seed = seeds.front();
  const auto ev = probe::evaluate_model(ck.params, mcfg, ds, cfg);
  {
    auto os = open_out(o.out);
    probe::write_metrics_csv(os, ev.report);
  }
  m.artifact_paths = {o.out};
  if (seeds.size() > 1) {
    const auto s = probe::evaluate_model_seeds(ck.params, mcfg, ds, pc, seeds);
    const auto path = sidecar(o.out, ".seeds.csv");
    auto os = open_out(path);
    os.precision(17);
    os << "seed,roc_auc,ap\n";
    for (std::size_t i = 0; i < seeds.size(); ++i) os << seeds[i] << ',' << s.roc_auc[i] << ',' << s.ap[i] << '\n';
    os << "mean," << s.roc_mean << ',' << s.ap_mean << '\n';
    os << "std," << s.roc_std << ',' << s.ap_std << '\n';
    os.close();
    m.artifact_paths.push_back(path);
  }
  run::write_run_manifest(sidecar(o.out, ".run.json"), m);
  std::cout << "probe: macro ROC-AUC " << ev.report.roc_auc_macro << ", AP " << ev.report.ap_macro << " over "
            << ev.report.tags_used << " tags -> " << o.out << "\n";
  return 0;
}

struct SweepOpts {
  Common common;
  ProbeFlags flags;
  std::string base, out, svg, metric = "roc_auc";
  std::vector<std::string> adapted, tasks;
  std::vector<double> lambdas = merge::kDefaultLambdas;
};

int cmd_sweep(const SweepOpts& o, const std::vector<std::string>& args) {
  ConfigFile cf = load_config(o.common);
  const auto pc = probe_settings(cf, o.flags, global_seed(o.common));
  cf.reject_unused(o.common.config.empty() ? "sweep" : o.common.config);
  require(o.metric == "roc_auc" || o.metric == "ap", "sweep: --metric must be roc_auc or ap", ErrorKind::config);
  const auto base = ckpt::load(o.base);
  const auto mcfg = trainer::config_of(base);
  std::vector<merge::TaskVector> vectors;
  for (const auto& p : o.adapted) vectors.push_back(merge::task_vector(ckpt::load(p), base, fs::path(p).stem().string()));

  std::vector<std::string> names;
  std::vector<probe::TaskDataset> tasks;
  nlohmann::json task_paths = nlohmann::json::object();
  for (const auto& t : o.tasks) {
    const auto [name, path] = split_pair(t, '=', "--task");
    names.push_back(name);
    tasks.push_back(probe::load_manifest(path));
    for (auto& c : tasks.back().clips) {
      if (c.audio.sample_rate != mcfg.sample_rate) c.audio = dsp::resample(c.audio, mcfg.sample_rate);
    }
    task_paths[name] = path;
  }
  const merge::EvalFn eval = [&](const ckpt::Checkpoint& ck) {
    std::vector<double> row;
    for (const auto& ds : tasks) {
      const auto r = probe::evaluate_model(ck.params, mcfg, ds, pc).report;
      row.push_back(o.metric == "ap" ? r.ap_macro : r.roc_auc_macro);
    }
    return row;
  };
  const auto table = merge::lambda_sweep(base, vectors, o.lambdas, names, eval);
  {
    auto os = open_out(o.out);
    merge::write_sweep_csv(os, table);
  }
  auto m = start_manifest("sweep", args, o.common);
  m.effective = {{"base", o.base},     {"adapted", o.adapted},        {"tasks", task_paths},
                 {"lambdas", o.lambdas}, {"metric", o.metric}, {"probe", run::to_json(pc)}};
  m.seed_record = {pc.rng_seed};
  m.artifact_paths = {o.out};
  if (!o.svg.empty()) {
    std::vector<svg::Series> series;
    for (std::size_t j = 0; j < names.size(); ++j) {
      svg::Series s{names[j], {}};
      for (const auto& row : table.metrics) s.y.push_back(row[j]);
      series.push_back(std::move(s));
    }
    auto os = open_out(o.svg);
    svg::line_plot(os, "lambda sweep (" + o.metric + ")", "lambda", table.lambdas, series);
    os.close();
    m.artifact_paths.push_back(o.svg);
  }
  run::write_run_manifest(sidecar(o.out, ".run.json"), m);
  std::cout << "sweep: " << table.lambdas.size() << " lambdas x " << names.size() << " tasks -> " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report: CSV in, SVG out; never recomputes metrics.

struct ReportOpts {
  Common common;
  std::string kind, in, out, title;
};

int cmd_report(const ReportOpts& o, const std::vector<std::string>& args) {
  const auto t = csv::read(o.in);
  const std::string where = o.in;
  auto num = [&](const std::string& s) { return csv::to_double(s, where); };
  auto os = open_out(o.out);
  if (o.kind == "sweep") {
    require(!t.header.empty() && t.header[0] == "lambda", where + ": expected a 'lambda,...' sweep table",
            ErrorKind::format);
    std::vector<double> x;
    std::vector<svg::Series> series;
    for (std::size_t j = 1; j < t.header.size(); ++j) series.push_back({t.header[j], {}});
    for (const auto& row : t.rows) {
      x.push_back(num(row[0]));
      for (std::size_t j = 1; j < row.size(); ++j) series[j - 1].y.push_back(num(row[j]));
    }
    svg::line_plot(os, o.title.empty() ? "lambda sweep" : o.title, "lambda", x, series);
  } else if (o.kind == "similarity") {
    std::ifstream is(o.in);
    const auto s = similarity::read_matrix_csv(is);
    svg::heatmap(os, o.title.empty() ? "culture similarity" : o.title, s.ids, s.values);
  } else if (o.kind == "radar") {
    // Rows: model,task...; the first row is the reference and maps to 1.
    require(t.header.size() >= 2 && !t.rows.empty(), where + ": expected 'model,task...' rows", ErrorKind::format);
    const std::vector<std::string> axes(t.header.begin() + 1, t.header.end());
    std::vector<double> ref;
    for (std::size_t j = 1; j < t.header.size(); ++j) ref.push_back(num(t.rows[0][j]));
    std::vector<svg::Series> series;
    for (const auto& row : t.rows) {
      svg::Series s{row[0], {}};
      for (std::size_t j = 1; j < row.size(); ++j) {
        require(ref[j - 1] != 0.0, where + ": reference value is zero for '" + axes[j - 1] + "'", ErrorKind::format);
        s.y.push_back(num(row[j]) / ref[j - 1]);
      }
      series.push_back(std::move(s));
    }
    svg::radar(os, o.title.empty() ? "relative performance" : o.title, axes, series);
  } else {
    throw Error(ErrorKind::config, "report: unknown kind '" + o.kind + "' (expected sweep, similarity or radar)");
  }
  os.close();
  auto m = start_manifest("report", args, o.common);
  m.effective = {{"kind", o.kind}, {"in", o.in}, {"title", o.title}};
  m.artifact_paths = {o.out};
  run::write_run_manifest(sidecar(o.out, ".run.json"), m);
  std::cout << "report: " << o.kind << " -> " << o.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cmrt: continual masked-prediction pre-training, merging and probing for music audio"};
  app.name("cmrt");
  app.set_version_flag("--version", run::kToolVersion);
  app.require_subcommand(1);

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic culture corpus (WAV clips + manifest.csv)");
  add_common(c_synth, synth.common);
  c_synth->add_option("--out", synth.out, "Output directory")->required();

  TokenizeOpts tok;
  auto* c_tok = app.add_subcommand("tokenize", "Tokenize a corpus and write its codeword histogram");
  add_common(c_tok, tok.common);
  c_tok->add_option("--corpus", tok.corpus, "Corpus manifest.csv")->required()->check(CLI::ExistingFile);
  c_tok->add_option("--out", tok.out, "Histogram CSV")->required();
  c_tok->add_option("--split", tok.split, "all, train, valid or test");
  c_tok->add_option("--K", tok.K, "Codebooks");
  c_tok->add_option("--C", tok.C, "Codewords per codebook");
  c_tok->add_option("--dim", tok.dim, "Feature dimension");
  c_tok->add_option("--hop", tok.hop, "Frame hop in samples");
  c_tok->add_option("--codec-seed", tok.codec_seed, "Codec seed; defaults to the global seed");

  SimilarityOpts sim;
  auto* c_sim = app.add_subcommand("similarity", "Pairwise culture distances from token histograms");
  add_common(c_sim, sim.common);
  c_sim->add_option("--hist", sim.hists, "id=histogram.csv (repeatable)")->required();
  c_sim->add_option("--metric", sim.metric, "jsd or cosine");
  c_sim->add_option("--smoothing", sim.smoothing, "Additive pseudocount per codeword");
  c_sim->add_option("--out", sim.out, "Matrix CSV")->required();

  PretrainOpts pre;
  auto* c_pre = app.add_subcommand("pretrain", "Run a pre-training stage (or both) from a config file");
  add_common(c_pre, pre.common);
  c_pre->add_option("--init", pre.init, "Initial checkpoint; omitted means fresh init from [model]")
      ->check(CLI::ExistingFile);
  c_pre->add_flag("--stage2", pre.stage2, "Run the second stage ([stage2] over its defaults)");
  c_pre->add_flag("--two-stage", pre.two_stage, "Run both stages in one process; stage 1 goes to OUT.stage1");
  c_pre->add_option("--out", pre.out, "Output checkpoint")->required();

  EvaluateOpts evl;
  auto* c_evl = app.add_subcommand("evaluate", "Held-out masked-prediction loss of a checkpoint");
  add_common(c_evl, evl.common);
  c_evl->add_option("--ckpt", evl.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_evl->add_option("--corpus", evl.corpora, "id=manifest.csv (repeatable)")->required();
  c_evl->add_option("--split", evl.split, "all, train, valid or test");
  c_evl->add_option("--alpha", evl.alpha, "Weight of the token loss");
  c_evl->add_option("--mask-seed", evl.mask_seed, "Mask seed; defaults to the global seed");
  c_evl->add_option("--out", evl.out, "Loss CSV")->required();

  MergeOpts mer;
  auto* c_mer = app.add_subcommand("merge", "Task arithmetic or weight averaging of checkpoints");
  add_common(c_mer, mer.common);
  c_mer->add_option("--base", mer.base, "Base checkpoint")->required()->check(CLI::ExistingFile);
  c_mer->add_option("--vector", mer.vectors, "adapted.cmrt:lambda (repeatable)");
  c_mer->add_option("--average", mer.averages, "Checkpoint to average (repeatable)");
  c_mer->add_option("--exclude", mer.exclude, "Tensor-name prefix kept at base values (repeatable)");
  c_mer->add_option("--out", mer.out, "Output checkpoint")->required();

  SweepOpts swp;
  auto* c_swp = app.add_subcommand("sweep", "Shared-lambda merge sweep evaluated by probing");
  add_common(c_swp, swp.common);
  add_probe_flags(c_swp, swp.flags);
  c_swp->add_option("--base", swp.base, "Base checkpoint")->required()->check(CLI::ExistingFile);
  c_swp->add_option("--adapted", swp.adapted, "Adapted checkpoint (repeatable)")->required();
  c_swp->add_option("--task", swp.tasks, "name=manifest.csv (repeatable)")->required();
  c_swp->add_option("--lambdas", swp.lambdas, "Lambda values")->delimiter(',');
  c_swp->add_option("--metric", swp.metric, "roc_auc or ap");
  c_swp->add_option("--out", swp.out, "Sweep CSV")->required();
  c_swp->add_option("--svg", swp.svg, "Also write a line plot");

  ProbeOpts prb;
  auto* c_prb = app.add_subcommand("probe", "Train a probe on frozen features and score the test split");
  add_common(c_prb, prb.common);
  add_probe_flags(c_prb, prb.flags);
  c_prb->add_option("--ckpt", prb.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_prb->add_option("--task", prb.task, "Task manifest.csv")->required()->check(CLI::ExistingFile);
  c_prb->add_option("--seeds", prb.seeds, "Probe seeds; more than one adds OUT.seeds.csv")->delimiter(',');
  c_prb->add_option("--out", prb.out, "Per-tag metrics CSV")->required();

  ReportOpts rep;
  auto* c_rep = app.add_subcommand("report", "Render a CSV artifact to SVG");
  add_common(c_rep, rep.common);
  c_rep->add_option("kind", rep.kind, "sweep, similarity or radar")->required();
  c_rep->add_option("--in", rep.in, "Input CSV")->required()->check(CLI::ExistingFile);
  c_rep->add_option("--out", rep.out, "Output SVG")->required();
  c_rep->add_option("--title", rep.title, "Figure title");

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (*c_synth) return cmd_synth(synth, args);
    if (*c_tok) return cmd_tokenize(tok, args);
    if (*c_sim) return cmd_similarity(sim, args);
    if (*c_pre) return cmd_pretrain(pre, args);
    if (*c_evl) return cmd_evaluate(evl, args);
    if (*c_mer) return cmd_merge(mer, args);
    if (*c_swp) return cmd_sweep(swp, args);
    if (*c_prb) return cmd_probe(prb, args);
    if (*c_rep) return cmd_report(rep, args);
  } catch (const Error& e) {
    std::cerr << "cmrt: " << to_string(e.kind()) << " error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "cmrt: internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
