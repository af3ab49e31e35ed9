// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sinkprune/model.hpp"
#include "sinkprune/numerics.hpp"
#include "sinkprune/sinkstats.hpp"

namespace sinkprune {

enum class TokenizerKind { kByte, kWhitespaceHash };

std::string to_string(TokenizerKind kind);
TokenizerKind parse_tokenizer_kind(const std::string& text);

/// Byte mode maps each byte to its value and needs vocab_size >= 257.
/// Whitespace-hash mode maps each word to FNV-1a(word) mod (vocab_size - 1).
TokenSequence tokenize(std::string_view text, TokenizerKind kind,
                       std::size_t vocab_size);

struct Corpus {
  std::vector<TokenSequence> documents;
  TokenizerKind tokenizer = TokenizerKind::kWhitespaceHash;
  std::size_t vocab_size = 0;
};

/// Documents are separated by blank lines.
Corpus load_corpus(std::string_view text, TokenizerKind kind, std::size_t vocab_size);
Corpus load_corpus_file(const std::string& path, TokenizerKind kind,
                        std::size_t vocab_size);

struct WindowRef {
  std::size_t document = 0;
  std::size_t offset = 0;
  friend bool operator==(const WindowRef&, const WindowRef&) = default;
};

struct CalibrationSet {
  std::vector<TokenSequence> sequences;
  std::vector<WindowRef> windows;
  std::size_t seq_len = 0;
  std::uint64_t seed = 0;
};

/// n windows of length s_cal drawn uniformly with replacement over all valid
/// (document, offset) pairs. Windows overlapping any window in `exclude`
/// are never drawn, which keeps evaluation windows disjoint from calibration.
CalibrationSet sample_calibration(const Corpus& corpus, std::size_t n,
                                  std::size_t s_cal, std::uint64_t seed,
                                  std::span<const WindowRef> exclude = {},
                                  std::size_t exclude_len = 0);

/// Replaces floor(S * t / T) seeded positions with MASK. Diffusion only.
TokenSequence noise_at_timestep(std::span<const TokenId> seq, std::size_t t,
                                std::size_t total_steps, std::uint64_t seed,
                                const ModelConfig& config);

struct LayerActivationStats {
  std::vector<double> column_sq_norms;
  DenseMatrix hessian_acc;  // sum of X^T X over every (sequence, step)
  std::size_t sample_count = 0;
  bool sink_masked = false;

  explicit LayerActivationStats(std::size_t c_in = 0)
      : column_sq_norms(c_in, 0.0), hessian_acc(c_in, c_in) {}

  std::size_t dim() const { return column_sq_norms.size(); }

  /// Adds one captured X (rows = positions). With `omega`, row j is scaled
  /// by omega[j] first. Counts as one (sequence, step) sample.
  void accumulate(const DenseMatrix& x, std::span<const double> omega = {});

  /// hessian_acc / sample_count.
  DenseMatrix hessian() const;

  friend bool operator==(const LayerActivationStats&,
                         const LayerActivationStats&) = default;
};

using ActivationStatsMap = std::map<std::string, LayerActivationStats>;

/// Deterministic per-(sequence, timestep) noising seed.
std::uint64_t noise_seed(std::uint64_t calib_seed, std::size_t sequence_index,
                         std::size_t t);

/// Model inputs for sequence `index` at timestep t: the noised sequence for
/// diffusion models, the clean sequence for autoregressive ones.
TokenSequence calibration_input(const NamedTensorCheckpoint& ckpt,
                                const CalibrationSet& calib, std::size_t index,
                                std::size_t t, std::size_t total_steps);

/// Pass 1: one attention trace per calibration sequence, labelled by
/// timestep. Autoregressive models contribute a single clean step labelled 1.
std::vector<AttentionTrace> collect_attention(const NamedTensorCheckpoint& ckpt,
                                              const CalibrationSet& calib,
                                              std::span<const std::size_t> timesteps,
                                              std::size_t total_steps);

/// Pass 2: accumulates every prunable layer's inputs over all (sequence,
/// timestep) pairs. A supplied profile scales row j of each X by omega_j.
ActivationStatsMap collect_activations(const NamedTensorCheckpoint& ckpt,
                                       const CalibrationSet& calib,
                                       std::span<const std::size_t> timesteps,
                                       std::size_t total_steps,
                                       const SinkProfile* sink_profile = nullptr);

}  // namespace sinkprune
