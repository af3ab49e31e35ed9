// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "sinkprune/prune.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "sinkprune/error.hpp"
#include "sinkprune/eval.hpp"

namespace sinkprune {

namespace {

// floor() of a ratio product, tolerant of values like 0.3 * 10 = 3.0000000000000004
// or 0.29 * 100 = 28.999999999999996.
std::size_t guarded_floor(double value) {
  return static_cast<std::size_t>(std::floor(value + 1e-9));
}

std::size_t parse_count(const std::string& text, const std::string& whole) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(ErrorCode::kInvalidPattern, "bad pattern '" + whole + "'");
  }
  return value;
}

void check_nm(const SparsityPattern& p, std::size_t c_in) {
  if (p.m == 0 || p.n > p.m) {
    fail(ErrorCode::kInvalidPattern,
         "n:m pattern needs 0 <= n <= m and m > 0, got " + to_string(p));
  }
  if (c_in % p.m != 0) {
    fail(ErrorCode::kInvalidPattern,
         "group width " + std::to_string(p.m) + " does not divide C_in " +
             std::to_string(c_in));
  }
}

// Drops the `count` lowest entries of scores[begin, end) in one row.
void drop_lowest(std::span<const double> row, std::size_t begin, std::size_t end,
                 std::size_t count, std::vector<bool>::iterator keep_row) {
  std::vector<std::size_t> order(end - begin);
  std::iota(order.begin(), order.end(), begin);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
  for (std::size_t i = 0; i < count && i < order.size(); ++i)
    keep_row[static_cast<std::ptrdiff_t>(order[i])] = false;
}

}  // namespace

std::string to_string(Criterion criterion) {
  switch (criterion) {
    case Criterion::kMagnitude: return "magnitude";
    case Criterion::kWanda: return "wanda";
    case Criterion::kSparseGpt: return "sparsegpt";
  }
  return "unknown";
}

Criterion parse_criterion(const std::string& text) {
  if (text == "magnitude") return Criterion::kMagnitude;
  if (text == "wanda") return Criterion::kWanda;
  if (text == "sparsegpt") return Criterion::kSparseGpt;
  fail(ErrorCode::kInvalidArgument, "unknown criterion '" + text + "'");
}

SparsityPattern parse_pattern(const std::string& text) {
  if (text == "rowwise" || text == "unstructured") return SparsityPattern::rowwise();
  if (text.rfind("nm:", 0) == 0) {
    const std::string rest = text.substr(3);
    const auto colon = rest.find(':');
    if (colon == std::string::npos) fail(ErrorCode::kInvalidPattern, "bad pattern '" + text + "'");
    return SparsityPattern::nm(parse_count(rest.substr(0, colon), text),
                               parse_count(rest.substr(colon + 1), text));
  }
  if (text.rfind("heads:", 0) == 0) {
    const std::string rest = text.substr(6);
    double ratio = 0.0;
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), ratio);
    if (ec != std::errc() || ptr != rest.data() + rest.size()) {
      fail(ErrorCode::kInvalidPattern, "bad pattern '" + text + "'");
    }
    return SparsityPattern::heads(ratio);
  }
  fail(ErrorCode::kInvalidPattern, "unknown pattern '" + text + "'");
}

std::string to_string(const SparsityPattern& pattern) {
  switch (pattern.kind) {
    case SparsityPattern::Kind::kUnstructuredPerRow: return "rowwise";
    case SparsityPattern::Kind::kNM:
      return "nm:" + std::to_string(pattern.n) + ":" + std::to_string(pattern.m);
    case SparsityPattern::Kind::kStructuredHeads: {
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof(buf), pattern.head_ratio);
      return "heads:" + std::string(buf, res.ptr);
    }
  }
  return "unknown";
}

std::size_t PruneMask::kept_in_row(std::size_t r) const {
  std::size_t kept = 0;
  for (std::size_t c = 0; c < cols; ++c) kept += at(r, c) ? 1 : 0;
  return kept;
}

PruneMask full_mask(std::size_t rows, std::size_t cols) {
  return PruneMask{rows, cols, std::vector<bool>(rows * cols, true), {}};
}

void PruneRequest::validate() const {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "sparsity must lie in [0, 1]");
  }
  if (blocksize == 0) fail(ErrorCode::kInvalidArgument, "blocksize must be >= 1");
  if (!(dampening_rel >= 0.0)) {
    fail(ErrorCode::kInvalidArgument, "dampening must be non-negative");
  }
}

std::size_t drops_per_row(std::size_t c_in, double sparsity) {
  return std::min(c_in, guarded_floor(static_cast<double>(c_in) * sparsity));
}

DenseMatrix magnitude_scores(const DenseMatrix& w) {
  DenseMatrix s = w;
  for (double& v : s.data()) v = std::abs(v);
  return s;
}

DenseMatrix wanda_scores(const DenseMatrix& w, const LayerActivationStats& stats) {
  if (stats.dim() != w.cols()) {
    fail(ErrorCode::kDimensionMismatch,
         "activation statistics cover " + std::to_string(stats.dim()) +
             " inputs, weight has " + std::to_string(w.cols()));
  }
  DenseMatrix s(w.rows(), w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    const double norm = std::sqrt(stats.column_sq_norms[j]);
    for (std::size_t i = 0; i < w.rows(); ++i) s(i, j) = std::abs(w(i, j)) * norm;
  }
  return s;
}

PruneMask select_mask(const DenseMatrix& scores, double sparsity,
                      const SparsityPattern& pattern) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "sparsity must lie in [0, 1]");
  }
  PruneMask mask = full_mask(scores.rows(), scores.cols());
  mask.pattern = pattern;
  const std::size_t c_in = scores.cols();
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    auto keep_row = mask.keep.begin() + static_cast<std::ptrdiff_t>(r * c_in);
    switch (pattern.kind) {
      case SparsityPattern::Kind::kUnstructuredPerRow:
        drop_lowest(scores.row(r), 0, c_in, drops_per_row(c_in, sparsity), keep_row);
        break;
      case SparsityPattern::Kind::kNM:
        check_nm(pattern, c_in);
        for (std::size_t g = 0; g < c_in; g += pattern.m)
          drop_lowest(scores.row(r), g, g + pattern.m, pattern.m - pattern.n, keep_row);
        break;
      case SparsityPattern::Kind::kStructuredHeads:
        fail(ErrorCode::kInvalidPattern,
             "head-structured sparsity is applied per model, not per matrix");
    }
  }
  return mask;
}

SparseGptResult sparsegpt_prune(const DenseMatrix& w, const LayerActivationStats& stats,
                                const PruneRequest& request) {
  request.validate();
  const std::size_t c_in = w.cols();
  const std::size_t c_out = w.rows();
  if (stats.dim() != c_in) {
    fail(ErrorCode::kDimensionMismatch,
         "Hessian is " + std::to_string(stats.dim()) + " wide, weight has " +
             std::to_string(c_in) + " inputs");
  }
  const SparsityPattern& pattern = request.pattern;
  if (pattern.kind == SparsityPattern::Kind::kStructuredHeads) {
    fail(ErrorCode::kInvalidPattern, "sparsegpt does not take a head pattern");
  }
  std::size_t block = request.blocksize;
  if (pattern.kind == SparsityPattern::Kind::kNM) {
    check_nm(pattern, c_in);
    block = (block + pattern.m - 1) / pattern.m * pattern.m;  // whole groups only
  }
  const std::size_t total_drops = drops_per_row(c_in, request.sparsity);

  SparseGptResult result{full_mask(c_out, c_in), w};
  result.mask.pattern = pattern;
  const bool nothing_to_prune =
      pattern.kind == SparsityPattern::Kind::kNM ? pattern.n == pattern.m
                                                 : total_drops == 0;
  if (nothing_to_prune || c_out == 0) return result;

  DenseMatrix h = stats.hessian();
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < c_in; ++i) mean_diag += h(i, i);
  mean_diag /= static_cast<double>(c_in);
  const double lambda = request.dampening_rel * mean_diag;
  for (std::size_t i = 0; i < c_in; ++i) h(i, i) += lambda;

  std::vector<std::size_t> pruned(c_out, 0);
  DenseMatrix& wt = result.weights;

  for (std::size_t b0 = 0; b0 < c_in; b0 += block) {
    const std::size_t b1 = std::min(c_in, b0 + block);
    const std::size_t f = c_in - b0;  // free window [b0, c_in)
    DenseMatrix h_free(f, f);
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < f; ++j) h_free(i, j) = h(b0 + i, b0 + j);
    const DenseMatrix hinv_free = psd_inverse(h_free);

    for (std::size_t r = 0; r < c_out; ++r) {
      // Candidate column groups for this block and how many each must lose.
      std::vector<std::pair<std::pair<std::size_t, std::size_t>, std::size_t>> groups;
      if (pattern.kind == SparsityPattern::Kind::kNM) {
        for (std::size_t g = b0; g < b1; g += pattern.m)
          groups.push_back({{g - b0, g - b0 + pattern.m}, pattern.m - pattern.n});
      } else {
        const std::size_t target = total_drops * b1 / c_in;  // running quota
        groups.push_back({{0, b1 - b0}, target - pruned[r]});
      }
      std::size_t quota_total = 0;
      for (const auto& g : groups) quota_total += g.second;
      if (quota_total == 0) continue;

      DenseMatrix g_inv = hinv_free;
      std::vector<bool> alive(f, true);
      std::span<double> wrow = wt.row(r).subspan(b0);

      for (const auto& [range, quota] : groups) {
        for (std::size_t k = 0; k < quota; ++k) {
          std::size_t best = f;
          double best_err = 0.0;
          for (std::size_t c = range.first; c < range.second; ++c) {
            if (!alive[c]) continue;
            const double err = wrow[c] * wrow[c] / g_inv(c, c);
            if (best == f || err < best_err) {
              best = c;
              best_err = err;
            }
          }
          if (best == f) break;
          const double pivot = g_inv(best, best);
          const double coef = wrow[best] / pivot;
          for (std::size_t j = 0; j < f; ++j)
            if (alive[j]) wrow[j] -= coef * g_inv(j, best);
          wrow[best] = 0.0;
          alive[best] = false;
          // Rank-one downdate: inverse of the Hessian over the remaining free set.
          std::vector<double> col(f);
          for (std::size_t j = 0; j < f; ++j) col[j] = alive[j] ? g_inv(j, best) : 0.0;
          for (std::size_t i = 0; i < f; ++i) {
            if (!alive[i] || col[i] == 0.0) continue;
            const double scale = col[i] / pivot;
            auto gi = g_inv.row(i);
            for (std::size_t j = 0; j < f; ++j)
              if (alive[j]) gi[j] -= scale * col[j];
          }
          for (std::size_t j = 0; j < f; ++j) {
            g_inv(best, j) = 0.0;
            g_inv(j, best) = 0.0;
          }
          result.mask.keep[r * c_in + b0 + best] = false;
          ++pruned[r];
        }
      }
    }
  }
  return result;
}

DenseMatrix apply_mask(const DenseMatrix& w, const PruneMask& mask) {
  if (w.rows() != mask.rows || w.cols() != mask.cols) {
    fail(ErrorCode::kShapeMismatch, "mask shape does not match weight shape");
  }
  DenseMatrix out = w;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask.keep[i]) out.data()[i] = 0.0;
  return out;
}

double verify_sparsity(const PruneMask& mask) {
  if (mask.keep.size() != mask.rows * mask.cols) {
    fail(ErrorCode::kShapeMismatch, "mask storage does not match its shape");
  }
  if (mask.keep.empty()) return 0.0;
  const auto dropped = std::count(mask.keep.begin(), mask.keep.end(), false);
  return static_cast<double>(dropped) / static_cast<double>(mask.keep.size());
}

namespace {

const LayerActivationStats& stats_for(const ActivationStatsMap& stats,
                                      const std::string& name) {
  auto it = stats.find(name);
  if (it == stats.end()) {
    fail(ErrorCode::kDimensionMismatch, "no activation statistics for " + name);
  }
  return it->second;
}

LayerPruneResult finish_layer(const std::string& name, Criterion criterion,
                              const DenseMatrix& original, const DenseMatrix& pruned,
                              PruneMask mask, const ActivationStatsMap& raw_stats) {
  LayerPruneResult out;
  out.name = name;
  out.criterion = criterion;
  out.achieved_sparsity = verify_sparsity(mask);
  out.recon_error = reconstruction_error(original, pruned, stats_for(raw_stats, name));
  out.mask = std::move(mask);
  return out;
}

}  // namespace

ModelPruneResult prune_model(const NamedTensorCheckpoint& ckpt,
                             const ActivationStatsMap& pruning_stats,
                             const ActivationStatsMap& raw_stats,
                             const PruneRequest& request) {
  request.validate();
  if (request.pattern.kind == SparsityPattern::Kind::kStructuredHeads) {
    return structured_head_prune(ckpt, pruning_stats, raw_stats, request.criterion,
                                 request.pattern.head_ratio);
  }
  if (request.sink_aware && request.criterion != Criterion::kMagnitude) {
    for (const auto& [name, s] : pruning_stats) {
      if (!s.sink_masked) {
        fail(ErrorCode::kMissingSinkProfile,
             "sink-aware pruning needs sink-masked statistics for " + name);
      }
    }
  }
  ModelPruneResult result;
  result.checkpoint = ckpt;
  for (const std::string& name : ckpt.prunable_names()) {
    const DenseMatrix& w = ckpt.at(name);
    PruneMask mask;
    DenseMatrix pruned;
    switch (request.criterion) {
      case Criterion::kMagnitude:
        mask = select_mask(magnitude_scores(w), request.sparsity, request.pattern);
        pruned = apply_mask(w, mask);
        break;
      case Criterion::kWanda:
        mask = select_mask(wanda_scores(w, stats_for(pruning_stats, name)),
                           request.sparsity, request.pattern);
        pruned = apply_mask(w, mask);
        break;
      case Criterion::kSparseGpt: {
        SparseGptResult sg = sparsegpt_prune(w, stats_for(pruning_stats, name), request);
        mask = std::move(sg.mask);
        pruned = std::move(sg.weights);
        break;
      }
    }
    result.layers.push_back(
        finish_layer(name, request.criterion, w, pruned, std::move(mask), raw_stats));
    result.checkpoint.at(name) = std::move(pruned);
  }
  return result;
}

ModelPruneResult structured_head_prune(const NamedTensorCheckpoint& ckpt,
                                       const ActivationStatsMap& stats,
                                       const ActivationStatsMap& raw_stats,
                                       Criterion criterion, double ratio) {
  if (!(ratio >= 0.0 && std::isfinite(ratio))) {
    fail(ErrorCode::kInvalidArgument, "head ratio must lie in [0, 1)");
  }
  if (criterion == Criterion::kSparseGpt) {
    fail(ErrorCode::kConfigConflict,
         "structured head pruning scores heads with wanda or magnitude");
  }
  const ModelConfig& cfg = ckpt.config;
  const std::size_t n_heads = cfg.n_heads;
  const std::size_t dh = cfg.head_dim();
  const std::size_t n_prune = guarded_floor(static_cast<double>(n_heads) * ratio);
  if (n_prune >= n_heads) {
    fail(ErrorCode::kAllHeadsPruned, "ratio would remove every head of a layer");
  }
  auto score_of = [&](const std::string& name) {
    const DenseMatrix& w = ckpt.at(name);
    return criterion == Criterion::kWanda ? wanda_scores(w, stats_for(stats, name))
                                          : magnitude_scores(w);
  };

  ModelPruneResult result;
  result.checkpoint = ckpt;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string q = layer_tensor_name(l, "attn.q_proj");
    const std::string k = layer_tensor_name(l, "attn.k_proj");
    const std::string v = layer_tensor_name(l, "attn.v_proj");
    const std::string o = layer_tensor_name(l, "attn.o_proj");
    const DenseMatrix sq = score_of(q), sk = score_of(k), sv = score_of(v),
                      so = score_of(o);

    HeadPruneLayer hl;
    hl.layer = l;
    hl.head_scores.assign(n_heads, 0.0);
    for (std::size_t h = 0; h < n_heads; ++h) {
      double total = 0.0;
      for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) {
        for (std::size_t c = 0; c < cfg.d_model; ++c)
          total += sq(r, c) + sk(r, c) + sv(r, c);
      }
      for (std::size_t r = 0; r < cfg.d_model; ++r)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) total += so(r, c);
      hl.head_scores[h] = total;
    }
    std::vector<std::size_t> order(n_heads);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return hl.head_scores[a] < hl.head_scores[b];
    });
    hl.pruned_heads.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_prune));
    std::sort(hl.pruned_heads.begin(), hl.pruned_heads.end());

    for (const std::string& name : {q, k, v, o}) {
      const DenseMatrix& w = ckpt.at(name);
      PruneMask mask = full_mask(w.rows(), w.cols());
      mask.pattern = SparsityPattern::heads(ratio);
      for (std::size_t h : hl.pruned_heads) {
        for (std::size_t a = h * dh; a < (h + 1) * dh; ++a) {
          for (std::size_t b = 0; b < cfg.d_model; ++b) {
            if (name == o) {
              mask.keep[b * w.cols() + a] = false;
            } else {
              mask.keep[a * w.cols() + b] = false;
            }
          }
        }
      }
      DenseMatrix pruned = apply_mask(w, mask);
      result.layers.push_back(
          finish_layer(name, criterion, w, pruned, std::move(mask), raw_stats));
      result.checkpoint.at(name) = std::move(pruned);
    }
    for (const char* kind : {"ffn.ff_up", "ffn.ff_down"}) {
      const std::string name = layer_tensor_name(l, kind);
      const DenseMatrix& w = ckpt.at(name);
      PruneMask mask = full_mask(w.rows(), w.cols());
      mask.pattern = SparsityPattern::heads(ratio);
      result.layers.push_back(finish_layer(name, criterion, w, w, std::move(mask), raw_stats));
    }
    result.heads.push_back(std::move(hl));
  }
  std::sort(result.layers.begin(), result.layers.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  return result;
}

}  // namespace sinkprune
