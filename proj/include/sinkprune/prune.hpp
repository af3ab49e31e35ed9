// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sinkprune/calib.hpp"
#include "sinkprune/model.hpp"
#include "sinkprune/numerics.hpp"

namespace sinkprune {

enum class Criterion { kMagnitude, kWanda, kSparseGpt };

std::string to_string(Criterion criterion);
Criterion parse_criterion(const std::string& text);

struct SparsityPattern {
  enum class Kind { kUnstructuredPerRow, kNM, kStructuredHeads };
  Kind kind = Kind::kUnstructuredPerRow;
  std::size_t n = 0;       // kNM: kept per group
  std::size_t m = 0;       // kNM: group width
  double head_ratio = 0;   // kStructuredHeads

  static SparsityPattern rowwise() { return {}; }
  static SparsityPattern nm(std::size_t n, std::size_t m) {
    return {Kind::kNM, n, m, 0.0};
  }
  static SparsityPattern heads(double ratio) {
    return {Kind::kStructuredHeads, 0, 0, ratio};
  }

  friend bool operator==(const SparsityPattern&, const SparsityPattern&) = default;
};

/// "rowwise", "nm:N:M" or "heads:R".
SparsityPattern parse_pattern(const std::string& text);
std::string to_string(const SparsityPattern& pattern);

/// Boolean keep-mask (true = keep), row-major like the weight it applies to.
struct PruneMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<bool> keep;
  SparsityPattern pattern;

  bool at(std::size_t r, std::size_t c) const { return keep[r * cols + c]; }
  std::size_t kept_in_row(std::size_t r) const;

  friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

PruneMask full_mask(std::size_t rows, std::size_t cols);

struct PruneRequest {
  Criterion criterion = Criterion::kWanda;
  bool sink_aware = false;
  double sparsity = 0.5;
  SparsityPattern pattern;
  /// Ridge added to the Hessian, relative to its mean diagonal.
  double dampening_rel = 0.01;
  std::size_t blocksize = 32;

  void validate() const;
};

/// floor(c_in * s) with a small guard against representation error.
std::size_t drops_per_row(std::size_t c_in, double sparsity);

DenseMatrix magnitude_scores(const DenseMatrix& w);

/// |w_ij| * sqrt(column_sq_norms_j).
DenseMatrix wanda_scores(const DenseMatrix& w, const LayerActivationStats& stats);

/// Per row, drops the floor(C_in * s) lowest scores (ties: lower column
/// first). For n:m, drops the m - n lowest in every aligned group of m.
PruneMask select_mask(const DenseMatrix& scores, double sparsity,
                      const SparsityPattern& pattern);

struct SparseGptResult {
  PruneMask mask;
  DenseMatrix weights;
};

/// Second-order pruning with weight reconstruction. Columns are processed
/// in blocks; within a block each row repeatedly removes its lowest
/// w_m^2 / [H^-1]_mm entry and applies the OBS correction to every
/// still-free column (the unpruned columns of this and later blocks), keeping
/// the free-set inverse exact by rank-one downdate. With blocksize == C_in
/// the surviving weights are the exact masked least-squares refit.
SparseGptResult sparsegpt_prune(const DenseMatrix& w, const LayerActivationStats& stats,
                                const PruneRequest& request);

DenseMatrix apply_mask(const DenseMatrix& w, const PruneMask& mask);
/// dropped / total.
double verify_sparsity(const PruneMask& mask);

struct LayerPruneResult {
  std::string name;
  Criterion criterion = Criterion::kWanda;
  double achieved_sparsity = 0.0;
  double recon_error = 0.0;
  PruneMask mask;
};

struct HeadPruneLayer {
  std::size_t layer = 0;
  std::vector<double> head_scores;
  std::vector<std::size_t> pruned_heads;
};

struct ModelPruneResult {
  NamedTensorCheckpoint checkpoint;
  std::vector<LayerPruneResult> layers;  // canonical name order
  std::vector<HeadPruneLayer> heads;     // structured pattern only
};

/// Prunes every prunable layer of `ckpt` with `request`. Scores use
/// `pruning_stats` (sink-masked when request.sink_aware); reconstruction
/// errors are measured on the unmasked `raw_stats`.
ModelPruneResult prune_model(const NamedTensorCheckpoint& ckpt,
                             const ActivationStatsMap& pruning_stats,
                             const ActivationStatsMap& raw_stats,
                             const PruneRequest& request);

/// Zeroes the floor(H * ratio) lowest-scoring heads of every layer. A head's
/// score sums the Wanda (or magnitude) scores over its q/k/v rows and o columns.
ModelPruneResult structured_head_prune(const NamedTensorCheckpoint& ckpt,
                                       const ActivationStatsMap& stats,
                                       const ActivationStatsMap& raw_stats,
                                       Criterion criterion, double ratio);

}  // namespace sinkprune
