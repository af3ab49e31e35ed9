// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "sinkprune/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "sinkprune/error.hpp"
#include "sinkprune/eval.hpp"
#include "sinkprune/io.hpp"
#include "sinkprune/rng.hpp"

namespace sinkprune::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string out_path(const RunConfig& cfg, const std::string& file) {
  return (fs::path(cfg.out_dir) / file).string();
}

void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) fail(ErrorCode::kIoFailure, "cannot create " + cfg.out_dir + ": " + ec.message());
}

void require_path(const std::string& path, const char* flag) {
  if (path.empty()) fail(ErrorCode::kConfigConflict, std::string(flag) + " is required");
}

NamedTensorCheckpoint load_model(const RunConfig& cfg) {
  require_path(cfg.checkpoint, "--checkpoint");
  NamedTensorCheckpoint ckpt = read_checkpoint(cfg.checkpoint);
  if (cfg.mode && *cfg.mode != ckpt.config.mode) {
    fail(ErrorCode::kConfigConflict,
         "--mode disagrees with the checkpoint (" + to_string(ckpt.config.mode) + ")");
  }
  if (!ckpt.config.is_diffusion() && (cfg.tsteps || cfg.total_steps || cfg.schedule)) {
    fail(ErrorCode::kConfigConflict,
         "--tsteps/--steps/--schedule apply to diffusion models only");
  }
  return ckpt;
}

Corpus load_corpus_for(const RunConfig& cfg, const ModelConfig& model) {
  require_path(cfg.corpus, "--corpus");
  return load_corpus_file(cfg.corpus, cfg.tokenizer, model.vocab_size);
}

std::size_t total_steps_of(const RunConfig& cfg) { return cfg.total_steps.value_or(32); }

std::vector<std::size_t> timesteps_of(const RunConfig& cfg, const ModelConfig& model) {
  if (!model.is_diffusion()) return {1};
  return uniform_timesteps(total_steps_of(cfg), cfg.tsteps.value_or(8));
}

UnmaskSchedule schedule_of(const RunConfig& cfg) {
  const std::string s = cfg.schedule.value_or("confidence");
  if (s == "confidence") return UnmaskSchedule::kConfidence;
  if (s == "random") return UnmaskSchedule::kRandom;
  fail(ErrorCode::kConfigConflict, "unknown schedule '" + s + "'");
}

void log_line(std::ostream* log, const std::string& text) {
  if (log != nullptr) *log << text << "\n";
}

// ---------------------------------------------------------------------------

void run_gen_model(const RunConfig& cfg, std::ostream* log) {
  ModelConfig model;
  model.mode = cfg.mode.value_or(ModelMode::kMaskedDiffusion);
  model.n_layers = cfg.n_layers;
  model.n_heads = cfg.n_heads;
  model.d_model = cfg.d_model;
  model.d_ff = cfg.d_ff;
  model.vocab_size = cfg.vocab_size;
  model.max_seq_len = cfg.max_seq_len;
  model.seed = cfg.seed_model;
  const NamedTensorCheckpoint ckpt = init_random_model(model);
  ensure_out_dir(cfg);
  const std::string path = out_path(cfg, "model.snkp");
  write_checkpoint(ckpt, path);
  log_line(log, "wrote " + path);
}

struct AnalysisRun {
  AttentionTrace trace;
  VarianceReport variance;
};

void run_analyze(const RunConfig& cfg, std::ostream* log) {
  std::vector<AnalysisRun> runs;
  json meta;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;

  if (cfg.synthetic) {
    SyntheticTraceSpec spec;
    spec.kind = *cfg.synthetic;
    spec.seq_len = cfg.trace_len;
    spec.n_steps = cfg.total_steps.value_or(16);
    spec.n_layers = cfg.n_layers;
    spec.n_heads = cfg.n_heads;
    spec.sink_share = cfg.sink_share;
    spec.jitter = cfg.jitter;
    spec.seed = cfg.seed_calib;
    runs.push_back({synthetic_trace(spec), {}});
    n_layers = spec.n_layers;
    n_heads = spec.n_heads;
    meta["source"] = "synthetic:" + to_string(spec.kind);
  } else {
    const NamedTensorCheckpoint ckpt = load_model(cfg);
    const Corpus corpus = load_corpus_for(cfg, ckpt.config);
    const CalibrationSet calib =
        sample_calibration(corpus, cfg.calib_n, cfg.calib_len, cfg.seed_calib);
    if (cfg.prompt_len == 0 || cfg.prompt_len >= cfg.calib_len) {
      fail(ErrorCode::kConfigConflict, "--prompt-len must lie in [1, calib-len)");
    }
    const std::size_t gen_len = cfg.calib_len - cfg.prompt_len;
    for (std::size_t i = 0; i < calib.sequences.size(); ++i) {
      const std::span<const TokenId> prompt(calib.sequences[i].data(), cfg.prompt_len);
      GenerationResult gen =
          ckpt.config.is_diffusion()
              ? denoise_diffusion(ckpt, prompt, gen_len, total_steps_of(cfg),
                                  schedule_of(cfg), derive_seed(cfg.seed_calib, i, 0xD1F))
              : decode_ar(ckpt, prompt, gen_len);
      runs.push_back({std::move(gen.trace), {}});
    }
    n_layers = ckpt.config.n_layers;
    n_heads = ckpt.config.n_heads;
    meta["source"] = "model";
    meta["mode"] = to_string(ckpt.config.mode);
  }
  if (runs.empty()) fail(ErrorCode::kInvalidArgument, "nothing to analyze (--calib-n 0)");

  std::size_t max_len = 0;
  for (const auto& r : runs)
    for (const auto& s : r.trace.steps) max_len = std::max(max_len, s.seq_len());
  // Variance statistics use sum-over-queries mass, whose per-position mean
  // is L*H; a user epsilon is given in mean-over-queries units.
  const double eps = cfg.epsilon ? *cfg.epsilon * static_cast<double>(max_len)
                                 : 0.5 * static_cast<double>(n_layers * n_heads);

  double sum_spatial = 0.0, sum_temporal = 0.0;
  for (auto& r : runs) {
    r.variance = temporal_variance(mass_series(r.trace, MassAggregation::kSumOverQueries), eps);
    sum_spatial += r.variance.spatial;
    sum_temporal += r.variance.temporal;
  }
  const double n_runs = static_cast<double>(runs.size());
  const double mean_spatial = sum_spatial / n_runs;
  const double mean_temporal = sum_temporal / n_runs;
  double var_spatial = 0.0, var_temporal = 0.0;
  for (const auto& r : runs) {
    var_spatial += (r.variance.spatial - mean_spatial) * (r.variance.spatial - mean_spatial);
    var_temporal +=
        (r.variance.temporal - mean_temporal) * (r.variance.temporal - mean_temporal);
  }
  const double std_spatial = std::sqrt(var_spatial / n_runs);
  const double std_temporal = std::sqrt(var_temporal / n_runs);

  ensure_out_dir(cfg);
  CsvTable heatmap{{"step", "layer", "head", "position", "mass"}, {}};
  const AttentionTrace& first = runs.front().trace;
  for (std::size_t t = 0; t < first.size(); ++t) {
    const AttentionSnapshot& snap = first.steps[t];
    for (std::size_t l = 0; l < snap.n_layers; ++l) {
      for (std::size_t h = 0; h < snap.n_heads; ++h) {
        const auto mass = incoming_mass(snap.at(l, h));
        for (std::size_t j = 0; j < mass.size(); ++j) {
          heatmap.rows.push_back({std::to_string(first.step_ids[t]), std::to_string(l),
                                  std::to_string(h), std::to_string(j),
                                  format_number(mass[j])});
        }
      }
    }
  }
  write_csv(heatmap, out_path(cfg, "heatmap.csv"));

  CsvTable centroids{{"run", "step", "centroid", "sink_count"}, {}};
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& v = runs[r].variance;
    for (std::size_t t = 0; t < v.centroids.size(); ++t) {
      centroids.rows.push_back({std::to_string(r), std::to_string(runs[r].trace.step_ids[t]),
                                format_number(v.centroids[t]),
                                std::to_string(v.sink_sets[t].size())});
    }
  }
  write_csv(centroids, out_path(cfg, "centroids.csv"));

  CsvTable variance{{"statistic", "value"}, {}};
  variance.rows.push_back({"spatial_variance", format_number(mean_spatial)});
  variance.rows.push_back({"temporal_variance", format_number(mean_temporal)});
  variance.rows.push_back({"spatial_variance_std", format_number(std_spatial)});
  variance.rows.push_back({"temporal_variance_std", format_number(std_temporal)});
  variance.rows.push_back({"runs", std::to_string(runs.size())});
  write_csv(variance, out_path(cfg, "variance.csv"));

  meta["aggregation"] = "sum_over_queries";
  meta["epsilon"] = eps;
  meta["spatial_variance"] = mean_spatial;
  meta["temporal_variance"] = mean_temporal;
  meta["spatial_variance_std"] = std_spatial;
  meta["temporal_variance_std"] = std_temporal;
  json run_list = json::array();
  for (const auto& r : runs) run_list.push_back(to_json(r.variance));
  meta["runs"] = run_list;
  meta["tool_version"] = kToolVersion;
  write_json(meta, out_path(cfg, "variance.json"));

  std::ostringstream msg;
  msg << "spatial variance " << mean_spatial << ", temporal variance " << mean_temporal
      << " over " << runs.size() << " run(s)";
  log_line(log, msg.str());
}

struct CalibrationBundle {
  CalibrationSet calib;
  std::vector<std::size_t> timesteps;
  ActivationStatsMap raw;
};

CalibrationBundle calibrate(const RunConfig& cfg, const NamedTensorCheckpoint& ckpt,
                            const Corpus& corpus) {
  CalibrationBundle b;
  b.calib = sample_calibration(corpus, cfg.calib_n, cfg.calib_len, cfg.seed_calib);
  if (b.calib.sequences.empty()) {
    fail(ErrorCode::kConfigConflict, "--calib-n must be positive");
  }
  b.timesteps = timesteps_of(cfg, ckpt.config);
  b.raw = collect_activations(ckpt, b.calib, b.timesteps, total_steps_of(cfg));
  return b;
}

void run_prune(const RunConfig& cfg, std::ostream* log) {
  const NamedTensorCheckpoint ckpt = load_model(cfg);
  const Corpus corpus = load_corpus_for(cfg, ckpt.config);
  CalibrationBundle bundle = calibrate(cfg, ckpt, corpus);

  PruneRequest request;
  request.criterion = cfg.criterion;
  request.sink_aware = cfg.sink_aware;
  request.sparsity = cfg.sparsity;
  request.pattern = cfg.pattern;
  request.dampening_rel = cfg.dampening_rel;
  request.blocksize = cfg.blocksize;
  request.validate();

  std::optional<SinkProfile> profile;
  ActivationStatsMap masked;
  const ActivationStatsMap* pruning_stats = &bundle.raw;
  if (cfg.sink_aware && cfg.criterion != Criterion::kMagnitude) {
    const std::size_t s = cfg.calib_len;
    const double eps = cfg.epsilon.value_or(
        default_epsilon(ckpt.config.n_layers, ckpt.config.n_heads, s));
    const double tau =
        cfg.tau.value_or(default_tau(ckpt.config.n_layers, ckpt.config.n_heads, s));
    if (cfg.omega_one) {
      profile = SinkProfile::identity(s);
      profile->epsilon = eps;
      profile->tau = tau;
      profile->timesteps = bundle.timesteps;
    } else {
      CalibrationSet profile_calib = bundle.calib;
      if (cfg.profile_disjoint) {
        profile_calib = sample_calibration(corpus, cfg.calib_n, cfg.calib_len,
                                           derive_seed(cfg.seed_calib, 0, 0x5A1F),
                                           bundle.calib.windows, cfg.calib_len);
      }
      const auto traces = collect_attention(ckpt, profile_calib, bundle.timesteps,
                                            total_steps_of(cfg));
      profile = build_sink_profile(traces, bundle.timesteps, eps, tau);
    }
    masked = collect_activations(ckpt, bundle.calib, bundle.timesteps, total_steps_of(cfg),
                                 &*profile);
    pruning_stats = &masked;
  }

  const ModelPruneResult result = prune_model(ckpt, *pruning_stats, bundle.raw, request);

  const bool reweighted = profile && !profile->is_identity();
  PruneReport report;
  report.run_config = json{{"criterion", to_string(cfg.criterion)},
                           {"sink_aware", reweighted},
                           {"sparsity", cfg.sparsity},
                           {"pattern", to_string(cfg.pattern)},
                           {"dampening_rel", cfg.dampening_rel},
                           {"blocksize", cfg.blocksize},
                           {"calib_n", cfg.calib_n},
                           {"calib_len", cfg.calib_len},
                           {"profile_split", cfg.profile_disjoint ? "disjoint" : "shared"},
                           {"timesteps", bundle.timesteps},
                           {"total_steps", ckpt.config.is_diffusion()
                                               ? total_steps_of(cfg)
                                               : std::size_t{1}},
                           {"tokenizer", to_string(cfg.tokenizer)},
                           {"model", config_to_json(ckpt.config)}};
  for (const auto& l : result.layers) {
    report.layers.push_back({l.name, to_string(l.criterion), l.achieved_sparsity,
                             l.recon_error});
  }
  report.heads = result.heads;
  if (reweighted) report.sink_profile = profile;
  report.seed_model = ckpt.config.seed;
  report.seed_calib = cfg.seed_calib;
  report.seed_eval = cfg.seed_eval;
  report.global_sparsity = global_sparsity(result.checkpoint);

  ensure_out_dir(cfg);
  write_checkpoint(result.checkpoint, out_path(cfg, "pruned.snkp"));
  write_report(report, out_path(cfg, "report.json"));
  if (reweighted) {
    CsvTable table{{"position", "phi_bar", "omega"}, {}};
    for (std::size_t j = 0; j < profile->omega.size(); ++j) {
      table.rows.push_back({std::to_string(j), format_number(profile->phi_bar[j]),
                            format_number(profile->omega[j])});
    }
    write_csv(table, out_path(cfg, "sink_profile.csv"));
  }
  std::ostringstream msg;
  msg << "pruned " << result.layers.size() << " layers, global sparsity "
      << report.global_sparsity;
  log_line(log, msg.str());
}

void run_eval(const RunConfig& cfg, std::ostream* log) {
  const NamedTensorCheckpoint ckpt = load_model(cfg);
  const Corpus corpus = load_corpus_for(cfg, ckpt.config);
  const CalibrationSet calib =
      sample_calibration(corpus, cfg.calib_n, cfg.calib_len, cfg.seed_calib);
  const CalibrationSet eval_set = sample_calibration(
      corpus, cfg.eval_n, cfg.calib_len, cfg.seed_eval, calib.windows, cfg.calib_len);

  EvalOptions options;
  options.mask_ratio = cfg.mask_ratio;
  options.seed = cfg.seed_eval;

  std::optional<NamedTensorCheckpoint> reference;
  ActivationStatsMap stats;
  if (!cfg.reference.empty()) {
    reference = read_checkpoint(cfg.reference);
    if (reference->config != ckpt.config) {
      fail(ErrorCode::kConfigConflict, "--reference has a different model config");
    }
    stats = collect_activations(*reference, calib, timesteps_of(cfg, ckpt.config),
                                total_steps_of(cfg));
  }
  const EvalReport report = evaluate(ckpt, eval_set.sequences, options,
                                     reference ? &*reference : nullptr,
                                     reference ? &stats : nullptr);
  ensure_out_dir(cfg);
  if (!cfg.reports.empty()) {
    json existing = read_json(cfg.reports.front());
    existing["eval"] = to_json(report);
    write_json(existing, cfg.reports.front());
    log_line(log, "updated " + cfg.reports.front());
  } else {
    write_json(json{{"eval", to_json(report)}}, out_path(cfg, "eval.json"));
  }
  std::ostringstream msg;
  msg << report.accuracy_kind << " accuracy " << report.accuracy << ", perplexity "
      << report.perplexity << ", global sparsity " << report.global_sparsity;
  log_line(log, msg.str());
}

std::string render_summary(const std::vector<std::string>& paths) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "criterion" << std::setw(7) << "sink" << std::setw(12)
      << "pattern" << std::setw(10) << "target" << std::setw(10) << "achieved"
      << std::setw(14) << "recon(mean)" << std::setw(10) << "acc" << std::setw(10) << "ppl"
      << "report\n";
  for (const std::string& path : paths) {
    const json r = read_json(path);
    const json& rc = r.at("run_config");
    double recon = 0.0;
    for (const auto& l : r.at("layers")) recon += l.at("recon_error").get<double>();
    if (!r.at("layers").empty()) recon /= static_cast<double>(r.at("layers").size());
    auto fixed = [](double v, int prec) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(prec) << v;
      return s.str();
    };
    std::string acc = "-", ppl = "-";
    if (r.contains("eval")) {
      acc = fixed(r["eval"].at("accuracy").get<double>(), 4);
      ppl = fixed(r["eval"].at("perplexity").get<double>(), 3);
    }
    out << std::left << std::setw(12) << rc.at("criterion").get<std::string>()
        << std::setw(7) << (rc.at("sink_aware").get<bool>() ? "yes" : "no") << std::setw(12)
        << rc.at("pattern").get<std::string>() << std::setw(10)
        << fixed(rc.at("sparsity").get<double>(), 3) << std::setw(10)
        << fixed(r.at("global_sparsity").get<double>(), 4) << std::setw(14)
        << fixed(recon, 5) << std::setw(10) << acc << std::setw(10) << ppl << path << "\n";
  }
  return out.str();
}

void run_report(const RunConfig& cfg, std::ostream* log) {
  if (cfg.reports.empty()) fail(ErrorCode::kConfigConflict, "--report is required");
  const std::string text = render_summary(cfg.reports);
  ensure_out_dir(cfg);
  write_text(text, out_path(cfg, "summary.txt"));
  if (log != nullptr) *log << text;
}

}  // namespace

void RunConfig::validate() const {
  if (pattern.kind == SparsityPattern::Kind::kNM &&
      !(pattern.m > 0 && pattern.n < pattern.m)) {
    fail(ErrorCode::kConfigConflict, "n:m pattern requires n < m");
  }
  if (pattern.kind == SparsityPattern::Kind::kStructuredHeads &&
      criterion == Criterion::kSparseGpt) {
    fail(ErrorCode::kConfigConflict, "heads pattern scores heads with wanda or magnitude");
  }
  if (omega_one && !sink_aware) {
    fail(ErrorCode::kConfigConflict, "--omega-one only applies with --sink-aware");
  }
  if (profile_disjoint && !sink_aware) {
    fail(ErrorCode::kConfigConflict, "--profile-disjoint only applies with --sink-aware");
  }
  if (mode == ModelMode::kAutoregressive && (tsteps || total_steps || schedule) &&
      subcommand != Subcommand::kAnalyze) {
    fail(ErrorCode::kConfigConflict,
         "--tsteps/--steps/--schedule apply to diffusion models only");
  }
  if (synthetic && !checkpoint.empty()) {
    fail(ErrorCode::kConfigConflict, "--synthetic-traces does not take a checkpoint");
  }
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    fail(ErrorCode::kConfigConflict, "--sparsity must lie in [0, 1]");
  }
}

namespace {

std::string flag_name(const std::string& arg) {
  return arg.substr(0, arg.find('='));
}

/// Splices `--config` file entries in after the subcommand, skipping any the
/// command line sets itself.
std::vector<std::string> with_config_defaults(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || args.empty()) return args;
  const std::string& subcommand = args.front();
  std::set<std::string> given;
  for (const auto& a : args)
    if (a.rfind("--", 0) == 0) given.insert(flag_name(a));

  std::vector<std::string> extra;
  for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() &&
        !(item.parents.size() == 1 && item.parents.front() == subcommand)) {
      continue;
    }
    const std::string flag = "--" + item.name;
    if (flag == "--config" || given.count(flag) > 0) continue;
    for (const auto& value : item.inputs) extra.push_back(flag + "=" + value);
  }
  args.insert(args.begin() + 1, extra.begin(), extra.end());
  return args;
}

}  // namespace

std::optional<RunConfig> parse_args(int argc, const char* const* argv) {
  RunConfig cfg;
  CLI::App app{"sink-aware post-training pruning for toy transformer LMs", "sinkprune"};
  app.require_subcommand(1);

  std::string mode_text, criterion_text = "wanda", pattern_text = "rowwise",
                         tokenizer_text = "whitespace-hash", synthetic_text;
  std::size_t tsteps = 0, total_steps = 0;
  std::string schedule_text;
  double epsilon = 0.0, tau = 0.0;

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "TOML/INI file with option defaults; flags override it");
  };
  auto add_seeds = [&](CLI::App* sub) {
    add_config(sub);
    sub->add_option("--seed-model", cfg.seed_model, "Model initialization seed");
    sub->add_option("--seed-calib", cfg.seed_calib, "Calibration sampling seed");
    sub->add_option("--seed-eval", cfg.seed_eval, "Evaluation sampling seed");
    sub->add_option("--out", cfg.out_dir, "Output directory");
  };
  auto add_model_inputs = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", cfg.checkpoint, "Input checkpoint (.snkp)");
    sub->add_option("--corpus", cfg.corpus, "Plain-text corpus, blank-line separated");
    sub->add_option("--tokenizer", tokenizer_text, "byte | whitespace-hash");
    sub->add_option("--mode", mode_text, "Expected model mode: ar | dlm");
    sub->add_option("--calib-n", cfg.calib_n, "Calibration sequences");
    sub->add_option("--calib-len", cfg.calib_len, "Calibration sequence length");
    sub->add_option("--steps", total_steps, "Diffusion steps T");
    sub->add_option("--tsteps", tsteps, "Size of the uniformly spaced timestep set");
    sub->add_option("--epsilon", epsilon, "Sink threshold (mean-mass units)");
    sub->add_option("--tau", tau, "Soft sink temperature");
  };

  CLI::App* gen = app.add_subcommand("gen-model", "Write a seeded random checkpoint");
  gen->add_option("--mode", mode_text, "ar | dlm")->default_str("dlm");
  gen->add_option("--layers", cfg.n_layers, "Transformer blocks");
  gen->add_option("--heads", cfg.n_heads, "Attention heads");
  gen->add_option("--d-model", cfg.d_model, "Model width");
  gen->add_option("--d-ff", cfg.d_ff, "Feed-forward width");
  gen->add_option("--vocab", cfg.vocab_size, "Vocabulary size (MASK is vocab-1)");
  gen->add_option("--max-seq", cfg.max_seq_len, "Maximum sequence length");
  add_seeds(gen);

  CLI::App* analyze = app.add_subcommand("analyze", "Attention-sink statistics");
  add_model_inputs(analyze);
  add_seeds(analyze);
  analyze->add_option("--synthetic-traces", synthetic_text,
                      "stationary | drifting | uniform (no model needed)");
  analyze->add_option("--trace-len", cfg.trace_len, "Synthetic trace length");
  analyze->add_option("--layers", cfg.n_layers, "Synthetic trace layers");
  analyze->add_option("--heads", cfg.n_heads, "Synthetic trace heads");
  analyze->add_option("--sink-share", cfg.sink_share, "Synthetic sink attention share");
  analyze->add_option("--jitter", cfg.jitter, "Synthetic drifting-sink jitter");
  analyze->add_option("--prompt-len", cfg.prompt_len, "Prompt tokens before generation");
  analyze->add_option("--schedule", schedule_text, "confidence | random");

  CLI::App* prune = app.add_subcommand("prune", "Prune a checkpoint");
  add_model_inputs(prune);
  add_seeds(prune);
  prune->add_option("--criterion", criterion_text, "magnitude | wanda | sparsegpt");
  prune->add_flag("--sink-aware", cfg.sink_aware, "Down-weight sink positions");
  prune->add_flag("--omega-one", cfg.omega_one, "Force omega == 1 (baseline check)");
  prune->add_flag("--profile-disjoint", cfg.profile_disjoint,
                  "Estimate the sink profile on windows disjoint from the pruning set");
  prune->add_option("--sparsity", cfg.sparsity, "Fraction of weights removed per row");
  prune->add_option("--pattern", pattern_text, "rowwise | nm:N:M | heads:R");
  prune->add_option("--damp", cfg.dampening_rel, "Hessian dampening, relative");
  prune->add_option("--blocksize", cfg.blocksize, "SparseGPT column block width");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a (pruned) checkpoint");
  add_model_inputs(eval);
  add_seeds(eval);
  eval->add_option("--reference", cfg.reference, "Dense checkpoint for recon error");
  eval->add_option("--report", cfg.reports, "Report JSON to append metrics into");
  eval->add_option("--eval-n", cfg.eval_n, "Held-out evaluation sequences");
  eval->add_option("--mask-ratio", cfg.mask_ratio, "Masked fraction per sequence");

  CLI::App* report = app.add_subcommand("report", "Summarize report JSON files");
  report->add_option("--report", cfg.reports, "Report JSON files")->required();
  report->add_option("--out", cfg.out_dir, "Output directory");
  add_config(report);

  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
  try {
    args = with_config_defaults(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return std::nullopt;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    fail(ErrorCode::kConfigConflict, e.what());
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  if (name == "gen-model") cfg.subcommand = Subcommand::kGenModel;
  if (name == "analyze") cfg.subcommand = Subcommand::kAnalyze;
  if (name == "prune") cfg.subcommand = Subcommand::kPrune;
  if (name == "eval") cfg.subcommand = Subcommand::kEval;
  if (name == "report") cfg.subcommand = Subcommand::kReport;

  auto given = [&](const char* flag) {
    const CLI::Option* opt = chosen->get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };
  if (!mode_text.empty()) cfg.mode = parse_model_mode(mode_text);
  cfg.criterion = parse_criterion(criterion_text);
  cfg.pattern = parse_pattern(pattern_text);
  cfg.tokenizer = parse_tokenizer_kind(tokenizer_text);
  if (given("--steps")) cfg.total_steps = total_steps;
  if (given("--tsteps")) cfg.tsteps = tsteps;
  if (given("--schedule")) cfg.schedule = schedule_text;
  if (given("--epsilon")) cfg.epsilon = epsilon;
  if (given("--tau")) cfg.tau = tau;
  if (!synthetic_text.empty()) cfg.synthetic = parse_synthetic_trace_kind(synthetic_text);
  cfg.validate();
  return cfg;
}

void run(const RunConfig& config, std::ostream* log) {
  config.validate();
  switch (config.subcommand) {
    case Subcommand::kGenModel: return run_gen_model(config, log);
    case Subcommand::kAnalyze: return run_analyze(config, log);
    case Subcommand::kPrune: return run_prune(config, log);
    case Subcommand::kEval: return run_eval(config, log);
    case Subcommand::kReport: return run_report(config, log);
  }
}

int main_entry(int argc, const char* const* argv) {
  try {
    const auto cfg = parse_args(argc, argv);
    if (!cfg) return 0;
    run(*cfg, &std::cout);
    return 0;
  } catch (const Error& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n' || c == '\r') c = ' ';
    std::cerr << "error: " << error_code_name(e.code()) << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace sinkprune::cli
