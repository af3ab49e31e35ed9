// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sinkprune/error.hpp"
#include "sinkprune/eval.hpp"
#include "sinkprune/prune.hpp"

using namespace sinkprune;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

LayerActivationStats stats_from(const DenseMatrix& x) {
  LayerActivationStats s(x.cols());
  s.accumulate(x);
  return s;
}

LayerActivationStats stats_with_norms(std::vector<double> sq_norms) {
  LayerActivationStats s(sq_norms.size());
  s.column_sq_norms = sq_norms;
  s.hessian_acc = DenseMatrix::diagonal(sq_norms);
  s.sample_count = 1;
  return s;
}

std::vector<bool> row_keep(const PruneMask& m, std::size_t r) {
  return {m.keep.begin() + static_cast<std::ptrdiff_t>(r * m.cols),
          m.keep.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols)};
}

PruneRequest request_for(Criterion c, double s, std::size_t blocksize = 32) {
  PruneRequest r;
  r.criterion = c;
  r.sparsity = s;
  r.blocksize = blocksize;
  return r;
}

/// H = X^T X / count + lambda I as used by the second-order criterion.
oracle::Mat damped(const LayerActivationStats& s, double rel) {
  const DenseMatrix h = s.hessian();
  oracle::Mat out = oracle::to_mat(h);
  double mean = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i) mean += h(i, i);
  mean /= static_cast<double>(h.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) out[i][i] += rel * mean;
  return out;
}

}  // namespace

TEST_CASE("magnitude and wanda scores") {
  CHECK(magnitude_scores(DenseMatrix(1, 2, std::vector<double>{-3, 1})) ==
        DenseMatrix(1, 2, std::vector<double>{3, 1}));
  CHECK(magnitude_scores(DenseMatrix(2, 2)) == DenseMatrix(2, 2));
  const DenseMatrix w(2, 2, std::vector<double>{1, -2, 3, 4});
  DenseMatrix neg = w;
  for (auto& v : neg.data()) v = -v;
  CHECK(magnitude_scores(neg) == magnitude_scores(w));

  const auto s = wanda_scores(w, stats_with_norms({1.0, 4.0}));
  CHECK(s == DenseMatrix(2, 2, std::vector<double>{1, 4, 3, 8}));
  const auto dead = wanda_scores(w, stats_with_norms({0.0, 4.0}));
  CHECK(dead(0, 0) == 0.0);
  CHECK(dead(1, 0) == 0.0);
  CHECK(wanda_scores(w, stats_with_norms({1.0, 1.0})) == magnitude_scores(w));
  CHECK(code_of([&] { wanda_scores(w, stats_with_norms({1.0, 1.0, 1.0})); }) ==
        ErrorCode::kDimensionMismatch);
}

TEST_CASE("select_mask examples") {
  const DenseMatrix scores(1, 4, std::vector<double>{1, 4, 3, 8});
  const auto half = select_mask(scores, 0.5, SparsityPattern::rowwise());
  CHECK(row_keep(half, 0) == std::vector<bool>{false, true, false, true});
  for (bool k : select_mask(scores, 0.0, SparsityPattern::rowwise()).keep) CHECK(k);
  for (bool k : select_mask(scores, 1.0, SparsityPattern::rowwise()).keep) CHECK_FALSE(k);

  const DenseMatrix tied(1, 4, std::vector<double>{2, 2, 2, 2});
  CHECK(row_keep(select_mask(tied, 0.5, SparsityPattern::rowwise()), 0) ==
        std::vector<bool>{false, false, true, true});

  const DenseMatrix wide(1, 8, std::vector<double>{5, 1, 2, 7, 3, 3, 9, 0});
  CHECK(row_keep(select_mask(wide, 0.5, SparsityPattern::nm(2, 4)), 0) ==
        std::vector<bool>{true, false, false, true, false, true, true, false});
  CHECK(code_of([&] { select_mask(DenseMatrix(1, 6), 0.5, SparsityPattern::nm(2, 4)); }) ==
        ErrorCode::kInvalidPattern);

  CHECK(parse_pattern("rowwise") == SparsityPattern::rowwise());
  CHECK(parse_pattern("nm:2:4") == SparsityPattern::nm(2, 4));
  CHECK(parse_pattern("heads:0.5") == SparsityPattern::heads(0.5));
  CHECK(code_of([] { parse_pattern("blocks"); }) == ErrorCode::kInvalidPattern);
  CHECK(to_string(SparsityPattern::nm(2, 4)) == "nm:2:4");
}

TEST_CASE("select_mask quotas on random scores") {
  std::mt19937_64 gen(41);
  for (double s : {0.25, 0.5, 0.75, 0.3}) {
    for (std::size_t c : {7u, 8u, 16u, 33u}) {
      const DenseMatrix sc = oracle::random_matrix(gen, 5, c, 0.0, 1.0);
      const auto m = select_mask(sc, s, SparsityPattern::rowwise());
      const std::size_t drops = static_cast<std::size_t>(std::floor(c * s + 1e-9));
      for (std::size_t r = 0; r < 5; ++r) {
        const auto k = row_keep(m, r);
        CHECK(static_cast<std::size_t>(std::count(k.begin(), k.end(), false)) == drops);
        double max_dropped = -1.0, min_kept = 2.0;
        for (std::size_t j = 0; j < c; ++j) {
          if (k[j]) min_kept = std::min(min_kept, sc(r, j));
          else max_dropped = std::max(max_dropped, sc(r, j));
        }
        CHECK(max_dropped <= min_kept);
      }
      CHECK(std::abs(verify_sparsity(m) - s) <= 1.0 / static_cast<double>(c));
    }
  }
  const DenseMatrix sc = oracle::random_matrix(gen, 6, 16, 0.0, 1.0);
  for (auto [n, mm] : {std::pair{1u, 4u}, {2u, 4u}, {3u, 8u}}) {
    const auto m = select_mask(sc, 0.0, SparsityPattern::nm(n, mm));
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t g = 0; g < 16; g += mm) {
        std::size_t kept = 0;
        for (std::size_t j = g; j < g + mm; ++j) kept += m.keep[r * 16 + j];
        CHECK(kept == n);
      }
  }
}

TEST_CASE("wanda mask is invariant to uniform activation scaling") {
  std::mt19937_64 gen(43);
  const DenseMatrix w = oracle::random_matrix(gen, 6, 10);
  const DenseMatrix x = oracle::random_matrix(gen, 20, 10);
  const auto base = stats_from(x);
  LayerActivationStats scaled(10);
  std::vector<double> omega(20, 0.37);
  scaled.accumulate(x, omega);
  CHECK(select_mask(wanda_scores(w, base), 0.5, SparsityPattern::rowwise()) ==
        select_mask(wanda_scores(w, scaled), 0.5, SparsityPattern::rowwise()));
}

TEST_CASE("apply_mask and verify_sparsity") {
  const DenseMatrix w(2, 8, 1.5);
  CHECK(apply_mask(w, full_mask(2, 8)) == w);
  PruneMask none = full_mask(2, 8);
  std::fill(none.keep.begin(), none.keep.end(), false);
  CHECK(apply_mask(w, none) == DenseMatrix(2, 8));
  CHECK(verify_sparsity(none) == 1.0);
  std::mt19937_64 gen(3);
  const auto m = select_mask(oracle::random_matrix(gen, 2, 8), 0.5, SparsityPattern::rowwise());
  const auto masked = apply_mask(w, m);
  for (std::size_t r = 0; r < 2; ++r)
    CHECK(std::count(masked.row(r).begin(), masked.row(r).end(), 0.0) == 4);
  CHECK(code_of([&] { apply_mask(DenseMatrix(3, 8), m); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("sparsegpt with nothing to prune is the identity") {
  std::mt19937_64 gen(47);
  const DenseMatrix w = oracle::random_matrix(gen, 4, 6);
  const auto st = stats_from(oracle::random_matrix(gen, 16, 6));
  const auto r = sparsegpt_prune(w, st, request_for(Criterion::kSparseGpt, 0.0));
  CHECK(r.weights == w);
  for (bool k : r.mask.keep) CHECK(k);
}

TEST_CASE("sparsegpt with an identity Hessian reduces to magnitude pruning") {
  std::mt19937_64 gen(53);
  for (int trial = 0; trial < 30; ++trial) {
    const DenseMatrix w = oracle::random_matrix(gen, 5, 8);
    const auto st = stats_from(DenseMatrix::identity(8));
    const auto r = sparsegpt_prune(w, st, request_for(Criterion::kSparseGpt, 0.5, 8));
    CHECK(r.mask == select_mask(magnitude_scores(w), 0.5, SparsityPattern::rowwise()));
    CHECK(r.weights == apply_mask(w, r.mask));
    // Narrow blocks keep the running per-block quota but never refit.
    const auto narrow = sparsegpt_prune(w, st, request_for(Criterion::kSparseGpt, 0.5, 3));
    CHECK(narrow.weights == apply_mask(w, narrow.mask));
    CHECK(verify_sparsity(narrow.mask) == 0.5);
  }
}

TEST_CASE("sparsegpt refit satisfies the masked normal equations") {
  std::mt19937_64 gen(59);
  for (int trial = 0; trial < 40; ++trial) {
    const DenseMatrix w = oracle::random_matrix(gen, 8, 16);
    const auto st = stats_from(oracle::random_matrix(gen, 40, 16));
    const auto r = sparsegpt_prune(w, st, request_for(Criterion::kSparseGpt, 0.5, 16));
    const auto h = damped(st, 0.01);
    for (std::size_t row = 0; row < 8; ++row) {
      std::vector<std::size_t> keep;
      for (std::size_t c = 0; c < 16; ++c) {
        if (r.mask.keep[row * 16 + c]) keep.push_back(c);
        else CHECK(r.weights(row, c) == 0.0);
      }
      CHECK(keep.size() == 8);
      for (std::size_t a : keep) {
        double res = 0.0;
        for (std::size_t c = 0; c < 16; ++c) res += h[a][c] * (r.weights(row, c) - w(row, c));
        CHECK(std::abs(res) <= 1e-4);
      }
    }
  }
}

TEST_CASE("sparsegpt beats mask-only magnitude pruning") {
  std::mt19937_64 gen(61);
  int wins = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const DenseMatrix w = oracle::random_matrix(gen, 4, 6);
    DenseMatrix x = oracle::random_matrix(gen, 16, 6);
    for (std::size_t r = 0; r < 16; ++r) x(r, 1) = 0.7 * x(r, 0) + 0.3 * x(r, 1);
    const auto st = stats_from(x);
    const auto sg = sparsegpt_prune(w, st, request_for(Criterion::kSparseGpt, 0.5));
    const auto mag = apply_mask(w, select_mask(magnitude_scores(w), 0.5, SparsityPattern::rowwise()));
    if (reconstruction_error(w, sg.weights, st) <= reconstruction_error(w, mag, st)) ++wins;

    // For a fixed mask the refit never loses to the mask alone.
    const auto own_mask_only = apply_mask(w, sg.mask);
    CHECK(reconstruction_error(w, sg.weights, st) <=
          reconstruction_error(w, own_mask_only, st) * (1 + 1e-12) + 1e-12);
  }
  CHECK(wins >= 95);
}

TEST_CASE("sparsegpt n:m respects the group budget") {
  std::mt19937_64 gen(67);
  const DenseMatrix w = oracle::random_matrix(gen, 6, 16);
  const auto st = stats_from(oracle::random_matrix(gen, 30, 16));
  PruneRequest req = request_for(Criterion::kSparseGpt, 0.0, 6);
  req.pattern = SparsityPattern::nm(2, 4);
  const auto r = sparsegpt_prune(w, st, req);
  for (std::size_t row = 0; row < 6; ++row)
    for (std::size_t g = 0; g < 16; g += 4) {
      std::size_t kept = 0;
      for (std::size_t j = g; j < g + 4; ++j) {
        kept += r.mask.keep[row * 16 + j];
        if (!r.mask.keep[row * 16 + j]) CHECK(r.weights(row, j) == 0.0);
      }
      CHECK(kept == 2);
    }
}

TEST_CASE("sparsegpt dimension and dampening errors") {
  const DenseMatrix w(2, 4, 1.0);
  CHECK(code_of([&] { sparsegpt_prune(w, stats_from(DenseMatrix::identity(3)),
                                      request_for(Criterion::kSparseGpt, 0.5)); }) ==
        ErrorCode::kDimensionMismatch);
  PruneRequest nodamp = request_for(Criterion::kSparseGpt, 0.5);
  nodamp.dampening_rel = 0.0;
  CHECK(code_of([&] { sparsegpt_prune(w, stats_from(DenseMatrix(2, 4, 1.0)), nodamp); }) ==
        ErrorCode::kNotPositiveDefinite);
}

TEST_CASE("request validation and parsing") {
  PruneRequest r;
  r.sparsity = 1.5;
  CHECK(code_of([&] { r.validate(); }) == ErrorCode::kInvalidArgument);
  r.sparsity = 0.5;
  r.blocksize = 0;
  CHECK(code_of([&] { r.validate(); }) == ErrorCode::kInvalidArgument);
  CHECK(parse_criterion("sparsegpt") == Criterion::kSparseGpt);
  CHECK(to_string(Criterion::kWanda) == "wanda");
}

TEST_CASE("drops_per_row rounds down with a representation guard") {
  CHECK(drops_per_row(8, 0.5) == 4);
  CHECK(drops_per_row(10, 0.3) == 3);
  CHECK(drops_per_row(7, 0.25) == 1);
  CHECK(drops_per_row(100, 0.29) == 29);
}

TEST_CASE("exhaustive mask oracle on tiny rows") {
  std::mt19937_64 gen(71);
  for (int trial = 0; trial < 20; ++trial) {
    const DenseMatrix w = oracle::random_matrix(gen, 1, 8);
    const bool identity = trial % 2 == 0;
    const auto st = identity ? stats_from(DenseMatrix::identity(8))
                             : stats_from(oracle::random_matrix(gen, 24, 8));
    const auto r = sparsegpt_prune(w, st, request_for(Criterion::kSparseGpt, 0.5, 8));
    const auto h = damped(st, 0.01);
    oracle::Vec wv(w.row(0).begin(), w.row(0).end());
    const auto best = oracle::exhaustive_best_mask(h, wv, 4);
    oracle::Vec d(8);
    for (std::size_t c = 0; c < 8; ++c) d[c] = w(0, c) - r.weights(0, c);
    const double got = oracle::quad_form(h, d);
    CHECK(got <= 1.10 * best.error + 1e-12);
    if (identity) {
      CHECK(got == doctest::Approx(best.error).epsilon(1e-12));
      std::vector<std::size_t> keep;
      for (std::size_t c = 0; c < 8; ++c)
        if (r.mask.keep[c]) keep.push_back(c);
      CHECK(keep == best.keep);
    }
  }
}

TEST_CASE("sparsegpt drops the weight whose removal costs least at every step") {
  std::mt19937_64 gen(83);
  for (int trial = 0; trial < 25; ++trial) {
    const DenseMatrix w = oracle::random_matrix(gen, 1, 8);
    const auto st = stats_from(oracle::random_matrix(gen, 24, 8));
    const auto r = sparsegpt_prune(w, st, request_for(Criterion::kSparseGpt, 0.5, 8));
    const auto h = damped(st, 0.01);
    const oracle::Vec wv(w.row(0).begin(), w.row(0).end());
    auto cost = [&](const std::vector<std::size_t>& keep) {
      const oracle::Vec v = oracle::refit(h, wv, keep);
      oracle::Vec d(8);
      for (std::size_t c = 0; c < 8; ++c) d[c] = wv[c] - v[c];
      return oracle::quad_form(h, d);
    };
    std::vector<std::size_t> keep{0, 1, 2, 3, 4, 5, 6, 7};
    for (int step = 0; step < 4; ++step) {
      std::size_t best = 0;
      double best_cost = 0.0;
      for (std::size_t i = 0; i < keep.size(); ++i) {
        std::vector<std::size_t> trial_keep = keep;
        trial_keep.erase(trial_keep.begin() + static_cast<std::ptrdiff_t>(i));
        const double c = cost(trial_keep);
        if (i == 0 || c < best_cost) {
          best = i;
          best_cost = c;
        }
      }
      keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(best));
    }
    std::vector<std::size_t> got;
    for (std::size_t c = 0; c < 8; ++c)
      if (r.mask.keep[c]) got.push_back(c);
    CHECK(got == keep);
    const oracle::Vec v = oracle::refit(h, wv, keep);
    for (std::size_t c = 0; c < 8; ++c) CHECK(r.weights(0, c) == doctest::Approx(v[c]).epsilon(1e-9));
  }
}
