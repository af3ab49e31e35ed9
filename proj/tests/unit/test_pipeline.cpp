// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

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

struct Fixture {
  NamedTensorCheckpoint ckpt;
  CalibrationSet calib;
  std::vector<std::size_t> ts{2, 4};
  ActivationStatsMap raw;

  explicit Fixture(ModelMode mode = ModelMode::kMaskedDiffusion, std::size_t heads = 2) {
    ModelConfig c;
    c.mode = mode;
    c.n_layers = 2;
    c.n_heads = heads;
    c.d_model = 16;
    c.d_ff = 24;
    c.vocab_size = 40;
    c.max_seq_len = 16;
    c.seed = 5;
    ckpt = init_random_model(c);
    Corpus corpus;
    corpus.vocab_size = 40;
    for (std::size_t d = 0; d < 3; ++d) {
      TokenSequence doc(40);
      for (std::size_t i = 0; i < 40; ++i) doc[i] = static_cast<TokenId>((i * i + 3 * d) % 39);
      corpus.documents.push_back(doc);
    }
    calib = sample_calibration(corpus, 4, 12, 8);
    if (mode == ModelMode::kAutoregressive) ts = {1};
    raw = collect_activations(ckpt, calib, ts, 4);
  }
};

PruneRequest req(Criterion c, double s, bool sink = false) {
  PruneRequest r;
  r.criterion = c;
  r.sparsity = s;
  r.sink_aware = sink;
  return r;
}

}  // namespace

TEST_CASE("sink-aware pruning with omega one reproduces the baseline") {
  Fixture f;
  const SinkProfile id = SinkProfile::identity(12);
  const auto masked = collect_activations(f.ckpt, f.calib, f.ts, 4, &id);
  for (Criterion c : {Criterion::kWanda, Criterion::kSparseGpt}) {
    const auto base = prune_model(f.ckpt, f.raw, f.raw, req(c, 0.5));
    const auto sink = prune_model(f.ckpt, masked, f.raw, req(c, 0.5, true));
    CHECK(sink.checkpoint == base.checkpoint);
    REQUIRE(sink.layers.size() == base.layers.size());
    for (std::size_t i = 0; i < base.layers.size(); ++i) {
      CHECK(sink.layers[i].mask == base.layers[i].mask);
      CHECK(sink.layers[i].recon_error == base.layers[i].recon_error);
    }
  }
  CHECK(code_of([&] { prune_model(f.ckpt, f.raw, f.raw, req(Criterion::kWanda, 0.5, true)); }) ==
        ErrorCode::kMissingSinkProfile);
}

TEST_CASE("a real sink profile changes the statistics") {
  Fixture f;
  const auto traces = collect_attention(f.ckpt, f.calib, f.ts, 4);
  const auto prof = build_sink_profile(traces, f.ts, default_epsilon(2, 2, 12), default_tau(2, 2, 12));
  for (std::size_t j = 0; j < 12; ++j) CHECK(prof.omega[j] == 1.0 - prof.phi_bar[j]);
  const auto masked = collect_activations(f.ckpt, f.calib, f.ts, 4, &prof);
  for (const auto& [name, s] : masked) {
    CHECK(s.sink_masked);
    CHECK_FALSE(s.hessian_acc == f.raw.at(name).hessian_acc);
  }
  const auto r = prune_model(f.ckpt, masked, f.raw, req(Criterion::kWanda, 0.5, true));
  for (const auto& l : r.layers) CHECK(l.achieved_sparsity == 0.5);
}

TEST_CASE("omega zero at one position equals deleting that calibration row") {
  Fixture f;
  for (std::size_t pos : {0u, 5u, 11u}) {
    SinkProfile prof = SinkProfile::identity(12);
    prof.omega[pos] = 0.0;
    prof.phi_bar[pos] = 1.0;
    const auto masked = collect_activations(f.ckpt, f.calib, f.ts, 4, &prof);
    for (const auto& [name, s] : masked) {
      oracle::Mat acc(s.dim(), oracle::Vec(s.dim(), 0.0));
      for (std::size_t i = 0; i < f.calib.sequences.size(); ++i)
        for (std::size_t t : f.ts) {
          const auto input = calibration_input(f.ckpt, f.calib, i, t, 4);
          const auto fr = forward(f.ckpt, input, {.activations = true});
          const DenseMatrix& x = fr.activations.at(name);
          DenseMatrix kept(x.rows() - 1, x.cols());
          for (std::size_t r = 0, k = 0; r < x.rows(); ++r) {
            if (r == pos) continue;
            for (std::size_t c = 0; c < x.cols(); ++c) kept(k, c) = x(r, c);
            ++k;
          }
          const auto g = oracle::gram(kept);
          for (std::size_t a = 0; a < s.dim(); ++a)
            for (std::size_t b = 0; b < s.dim(); ++b) acc[a][b] += g[a][b];
        }
      for (std::size_t a = 0; a < s.dim(); ++a) {
        CHECK(std::abs(s.column_sq_norms[a] - acc[a][a]) <= 1e-9);
        for (std::size_t b = 0; b < s.dim(); ++b) CHECK(std::abs(s.hessian_acc(a, b) - acc[a][b]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("prune_model sparsity accounting") {
  Fixture f;
  for (double s : {0.25, 0.5, 0.75}) {
    for (Criterion c : {Criterion::kMagnitude, Criterion::kWanda, Criterion::kSparseGpt}) {
      const auto r = prune_model(f.ckpt, f.raw, f.raw, req(c, s));
      double slack = 0.0;
      for (const auto& l : r.layers) {
        const std::size_t cols = l.mask.cols;
        CHECK(std::abs(l.achieved_sparsity - s) <= 1.0 / static_cast<double>(cols));
        const std::size_t drops = static_cast<std::size_t>(std::floor(cols * s + 1e-9));
        for (std::size_t row = 0; row < l.mask.rows; ++row) {
          std::size_t zeros = 0;
          for (std::size_t j = 0; j < cols; ++j) zeros += r.checkpoint.at(l.name)(row, j) == 0.0;
          CHECK(zeros >= drops);
        }
        slack = std::max(slack, 1.0 / static_cast<double>(cols));
      }
      CHECK(std::abs(global_sparsity(r.checkpoint) - s) <= slack);
      CHECK(r.checkpoint.at("embed") == f.ckpt.at("embed"));
      CHECK(r.checkpoint.at("unembed") == f.ckpt.at("unembed"));
    }
  }
  const auto none = prune_model(f.ckpt, f.raw, f.raw, req(Criterion::kSparseGpt, 0.0));
  CHECK(none.checkpoint == f.ckpt);

  PruneRequest nm = req(Criterion::kWanda, 0.0);
  nm.pattern = SparsityPattern::nm(2, 4);
  const auto r = prune_model(f.ckpt, f.raw, f.raw, nm);
  for (const auto& l : r.layers)
    for (std::size_t row = 0; row < l.mask.rows; ++row)
      for (std::size_t g = 0; g < l.mask.cols; g += 4) {
        std::size_t kept = 0;
        for (std::size_t j = g; j < g + 4; ++j) kept += l.mask.keep[row * l.mask.cols + j];
        CHECK(kept <= 2);
      }
}

TEST_CASE("structured head pruning") {
  Fixture f(ModelMode::kMaskedDiffusion, 4);
  CHECK(structured_head_prune(f.ckpt, f.raw, f.raw, Criterion::kWanda, 0.0).checkpoint == f.ckpt);
  for (double r : {0.3, 0.5}) {
    const auto out = structured_head_prune(f.ckpt, f.raw, f.raw, Criterion::kWanda, r);
    const std::size_t expect = static_cast<std::size_t>(std::floor(4 * r));
    REQUIRE(out.heads.size() == 2);
    for (const auto& hl : out.heads) {
      CHECK(hl.pruned_heads.size() == expect);
      std::size_t zero_heads = 0;
      for (std::size_t h = 0; h < 4; ++h) {
        bool all_zero = true;
        for (const char* kind : {"attn.q_proj", "attn.k_proj", "attn.v_proj"})
          for (std::size_t a = h * 4; a < h * 4 + 4; ++a)
            for (std::size_t c = 0; c < 16; ++c)
              all_zero &= out.checkpoint.at(layer_tensor_name(hl.layer, kind))(a, c) == 0.0;
        for (std::size_t a = 0; a < 16; ++a)
          for (std::size_t c = h * 4; c < h * 4 + 4; ++c)
            all_zero &= out.checkpoint.at(layer_tensor_name(hl.layer, "attn.o_proj"))(a, c) == 0.0;
        zero_heads += all_zero;
      }
      CHECK(zero_heads == expect);
      // Chosen heads are the lowest scores.
      std::vector<double> sorted = hl.head_scores;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t h : hl.pruned_heads) CHECK(hl.head_scores[h] <= sorted[expect - 1]);
    }
  }
  CHECK(code_of([&] { structured_head_prune(f.ckpt, f.raw, f.raw, Criterion::kSparseGpt, 0.5); }) ==
        ErrorCode::kConfigConflict);

  Fixture two(ModelMode::kMaskedDiffusion, 2);
  const auto half = structured_head_prune(two.ckpt, two.raw, two.raw, Criterion::kWanda, 0.5);
  for (const auto& hl : half.heads) CHECK(hl.pruned_heads.size() == 1);
  CHECK(code_of([&] { structured_head_prune(two.ckpt, two.raw, two.raw, Criterion::kMagnitude, 1.0); }) ==
        ErrorCode::kAllHeadsPruned);
  CHECK(code_of([&] { structured_head_prune(two.ckpt, two.raw, two.raw, Criterion::kMagnitude, -0.1); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("an inert head scores zero and is pruned first") {
  Fixture f(ModelMode::kMaskedDiffusion, 4);
  auto ckpt = f.ckpt;
  const std::size_t dead = 2;
  for (std::size_t l = 0; l < 2; ++l) {
    for (const char* kind : {"attn.q_proj", "attn.k_proj", "attn.v_proj"}) {
      auto& w = ckpt.at(layer_tensor_name(l, kind));
      for (std::size_t a = dead * 4; a < dead * 4 + 4; ++a)
        for (std::size_t c = 0; c < 16; ++c) w(a, c) = 0.0;
    }
    auto& o = ckpt.at(layer_tensor_name(l, "attn.o_proj"));
    for (std::size_t a = 0; a < 16; ++a)
      for (std::size_t c = dead * 4; c < dead * 4 + 4; ++c) o(a, c) = 0.0;
  }
  const auto stats = collect_activations(ckpt, f.calib, f.ts, 4);
  const auto out = structured_head_prune(ckpt, stats, stats, Criterion::kWanda, 0.25);
  for (const auto& hl : out.heads) {
    CHECK(hl.head_scores[dead] == 0.0);
    CHECK(hl.pruned_heads == std::vector<std::size_t>{dead});
  }
}

TEST_CASE("heads pattern through prune_model") {
  Fixture f(ModelMode::kAutoregressive, 4);
  PruneRequest r = req(Criterion::kWanda, 0.0);
  r.pattern = SparsityPattern::heads(0.5);
  const auto out = prune_model(f.ckpt, f.raw, f.raw, r);
  CHECK(out.heads.size() == 2);
  for (const auto& l : out.layers) {
    if (l.name.find("ffn") != std::string::npos) CHECK(l.achieved_sparsity == 0.0);
  }
}
