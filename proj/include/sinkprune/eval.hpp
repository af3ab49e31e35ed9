// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sinkprune/calib.hpp"
#include "sinkprune/model.hpp"
#include "sinkprune/numerics.hpp"

namespace sinkprune {

/// trace((W - W~) H_raw (W - W~)^T) with H_raw = sum X^T X, i.e. the squared
/// output error ||W X - W~ X||_F^2 summed over the calibration data.
double reconstruction_error(const DenseMatrix& w, const DenseMatrix& w_tilde,
                            const LayerActivationStats& stats);

/// Fraction of masked positions whose argmax prediction recovers the
/// original token. floor(ratio * S) positions per sequence are masked by a
/// seeded draw; with no masked positions the accuracy is defined as 1.
double masked_accuracy(const NamedTensorCheckpoint& ckpt,
                       std::span<const TokenSequence> eval_set, double mask_ratio,
                       std::uint64_t seed);

/// exp(mean negative log-probability of the true token), masking one position
/// at a time. At most `positions_per_sequence` seeded positions per sequence
/// are scored (0 scores every position).
double pseudo_perplexity(const NamedTensorCheckpoint& ckpt,
                         std::span<const TokenSequence> eval_set, std::uint64_t seed,
                         std::size_t positions_per_sequence = 0);

/// Teacher-forced next-token accuracy and perplexity for autoregressive models.
double next_token_accuracy(const NamedTensorCheckpoint& ckpt,
                           std::span<const TokenSequence> eval_set);
double next_token_perplexity(const NamedTensorCheckpoint& ckpt,
                             std::span<const TokenSequence> eval_set);

/// zeros / total over every prunable tensor.
double global_sparsity(const NamedTensorCheckpoint& ckpt);

struct EvalReport {
  std::map<std::string, double> recon_error;
  /// masked_accuracy for diffusion models, next-token accuracy for AR models.
  double accuracy = 0.0;
  double perplexity = 1.0;
  double global_sparsity = 0.0;
  std::string accuracy_kind;
};

struct EvalOptions {
  double mask_ratio = 0.15;
  std::uint64_t seed = 0;
  std::size_t ppl_positions_per_sequence = 8;
};

/// Accuracy and perplexity on `eval_set` dispatched by model mode; when
/// `reference` and `stats` are given, also per-layer reconstruction errors.
EvalReport evaluate(const NamedTensorCheckpoint& ckpt,
                    std::span<const TokenSequence> eval_set, const EvalOptions& options,
                    const NamedTensorCheckpoint* reference = nullptr,
                    const ActivationStatsMap* stats = nullptr);

}  // namespace sinkprune
