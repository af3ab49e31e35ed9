// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sinkprune/calib.hpp"
#include "sinkprune/model.hpp"
#include "sinkprune/prune.hpp"
#include "sinkprune/sinkstats.hpp"

namespace sinkprune::cli {

enum class Subcommand { kGenModel, kAnalyze, kPrune, kEval, kReport };

struct RunConfig {
  Subcommand subcommand = Subcommand::kGenModel;

  // gen-model
  std::optional<ModelMode> mode;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 128;
  std::size_t max_seq_len = 128;

  // inputs / outputs
  std::string checkpoint;
  std::string reference;
  std::string corpus;
  std::string out_dir = ".";
  std::vector<std::string> reports;
  TokenizerKind tokenizer = TokenizerKind::kWhitespaceHash;

  // pruning
  Criterion criterion = Criterion::kWanda;
  bool sink_aware = false;
  bool omega_one = false;
  /// Estimate the sink profile on calibration windows disjoint from the
  /// pruning statistics instead of the same ones.
  bool profile_disjoint = false;
  double sparsity = 0.5;
  SparsityPattern pattern;
  double dampening_rel = 0.01;
  std::size_t blocksize = 32;

  // sink statistics
  std::optional<double> epsilon;
  std::optional<double> tau;
  std::optional<std::size_t> tsteps;       // |timestep set|, diffusion only
  std::optional<std::size_t> total_steps;  // T, diffusion only
  std::optional<std::string> schedule;     // diffusion only
  std::optional<SyntheticTraceKind> synthetic;
  std::size_t trace_len = 32;
  double sink_share = 0.6;
  double jitter = 0.0;
  std::size_t prompt_len = 8;

  // calibration / evaluation
  std::size_t calib_n = 32;
  std::size_t calib_len = 128;
  std::size_t eval_n = 16;
  double mask_ratio = 0.15;

  std::uint64_t seed_model = 0;
  std::uint64_t seed_calib = 1;
  std::uint64_t seed_eval = 2;

  /// Flag-level consistency checks; throws ConfigConflict.
  void validate() const;
};

/// Parses argv (flags override an optional --config file). Returns nullopt
/// after printing help; throws Error(ConfigConflict) on bad usage.
std::optional<RunConfig> parse_args(int argc, const char* const* argv);

/// Executes one subcommand, writing artifacts under out_dir. Human-readable
/// progress goes to `log` when non-null.
void run(const RunConfig& config, std::ostream* log = nullptr);

/// Entry point used by the executable: returns the process exit status and
/// prints failures as one "error: <Code>: <message>" line on stderr.
int main_entry(int argc, const char* const* argv);

}  // namespace sinkprune::cli
