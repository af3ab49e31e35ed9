// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sinkprune/error.hpp"
#include "sinkprune/eval.hpp"

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

ModelConfig tiny_config(ModelMode mode) {
  ModelConfig c;
  c.mode = mode;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 8;
  c.vocab_size = 16;
  c.max_seq_len = 32;
  return c;
}

NamedTensorCheckpoint zero_model(ModelMode mode) {
  NamedTensorCheckpoint ckpt = init_random_model(tiny_config(mode));
  for (auto& [name, t] : ckpt.tensors) t = DenseMatrix(t.rows(), t.cols());
  return ckpt;
}

// One-hot token embeddings, uniform attention (zero q/k), identity value and
// output projections: each position sees the mean of all positions, so a
// masked slot in a constant sequence is recovered from its context.
NamedTensorCheckpoint copy_model() {
  NamedTensorCheckpoint ckpt = zero_model(ModelMode::kMaskedDiffusion);
  for (std::size_t t = 0; t < 16; ++t) ckpt.at("embed")(t, t) = 1.0;
  for (std::size_t i = 0; i < 16; ++i) {
    ckpt.at("layer.0.attn.v_proj")(i, i) = 1.0;
    ckpt.at("layer.0.attn.o_proj")(i, i) = 1.0;
    ckpt.at("unembed")(i, i) = 20.0;
  }
  return ckpt;
}

std::vector<TokenSequence> uniform_sequences(std::size_t n, std::size_t len, std::size_t vocab,
                                             std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<TokenId> u(0, static_cast<TokenId>(vocab - 2));
  std::vector<TokenSequence> out(n, TokenSequence(len));
  for (auto& s : out)
    for (auto& t : s) t = u(gen);
  return out;
}

}  // namespace

TEST_CASE("reconstruction_error") {
  std::mt19937_64 gen(73);
  const DenseMatrix w = oracle::random_matrix(gen, 3, 5);
  const DenseMatrix x = oracle::random_matrix(gen, 9, 5);
  LayerActivationStats st(5);
  st.accumulate(x);
  CHECK(reconstruction_error(w, w, st) == 0.0);

  DenseMatrix wt = w;
  wt(0, 1) = 0.0;
  wt(2, 4) *= 0.5;
  wt(1, 0) += 0.3;
  // Direct product: sum over calibration rows of ||(W - W~) x_r||^2.
  double direct = 0.0;
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t o = 0; o < 3; ++o) {
      double a = 0.0;
      for (std::size_t c = 0; c < 5; ++c) a += (w(o, c) - wt(o, c)) * x(r, c);
      direct += a * a;
    }
  CHECK(reconstruction_error(w, wt, st) == doctest::Approx(direct).epsilon(1e-6));

  LayerActivationStats id(5);
  id.accumulate(DenseMatrix::identity(5));
  double fro = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) fro += std::pow(w.data()[k] - wt.data()[k], 2);
  CHECK(reconstruction_error(w, wt, id) == doctest::Approx(fro).epsilon(1e-12));

  CHECK(code_of([&] { reconstruction_error(w, DenseMatrix(3, 4), st); }) ==
        ErrorCode::kDimensionMismatch);
}

TEST_CASE("masked accuracy on a copy-task model") {
  const auto ckpt = copy_model();
  std::vector<TokenSequence> set;
  for (TokenId c = 0; c < 15; ++c) set.push_back(TokenSequence(20, c));
  CHECK(masked_accuracy(ckpt, set, 0.15, 1) == 1.0);
  CHECK(masked_accuracy(ckpt, set, 0.3, 2) == 1.0);
  const double ppl = pseudo_perplexity(ckpt, set, 3, 4);
  CHECK(ppl >= 1.0);
  CHECK(ppl < 1.0 + 1e-6);
  const std::vector<TokenSequence> short_set{TokenSequence(5, 2)};
  CHECK(masked_accuracy(ckpt, short_set, 0.15, 1) == 1.0);
}

TEST_CASE("uniform logits give chance accuracy and perplexity V") {
  const auto ckpt = zero_model(ModelMode::kMaskedDiffusion);
  const auto set = uniform_sequences(200, 20, 16, 5);
  const double acc = masked_accuracy(ckpt, set, 0.5, 7);
  const double n = 200.0 * 10.0;
  const double p = 1.0 / 15.0;
  CHECK(std::abs(acc - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
  CHECK(pseudo_perplexity(ckpt, set, 1, 3) == doctest::Approx(16.0).epsilon(0.01));
}

TEST_CASE("perplexity never falls below one and modes are enforced") {
  const auto rnd = init_random_model(tiny_config(ModelMode::kMaskedDiffusion));
  const auto set = uniform_sequences(4, 12, 16, 9);
  CHECK(pseudo_perplexity(rnd, set, 0, 0) >= 1.0);
  const double a = masked_accuracy(rnd, set, 0.25, 11);
  CHECK(a == masked_accuracy(rnd, set, 0.25, 11));
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);

  const auto ar = init_random_model(tiny_config(ModelMode::kAutoregressive));
  CHECK(code_of([&] { masked_accuracy(ar, set, 0.2, 1); }) == ErrorCode::kWrongMode);
  CHECK(code_of([&] { pseudo_perplexity(ar, set, 1); }) == ErrorCode::kWrongMode);
  CHECK(next_token_perplexity(ar, set) >= 1.0);
  const double nt = next_token_accuracy(ar, set);
  CHECK(nt >= 0.0);
  CHECK(nt <= 1.0);
  CHECK(code_of([&] { next_token_accuracy(rnd, set); }) == ErrorCode::kWrongMode);

  const auto zero_ar = zero_model(ModelMode::kAutoregressive);
  CHECK(next_token_perplexity(zero_ar, set) == doctest::Approx(16.0).epsilon(1e-9));
}

TEST_CASE("global_sparsity counts zeros over prunable tensors only") {
  auto ckpt = init_random_model(tiny_config(ModelMode::kMaskedDiffusion));
  CHECK(global_sparsity(ckpt) == 0.0);
  std::size_t total = 0;
  for (const auto& name : ckpt.prunable_names()) total += ckpt.at(name).size();
  auto& q = ckpt.at("layer.0.attn.q_proj");
  for (std::size_t c = 0; c < q.cols(); ++c) q(0, c) = 0.0;
  for (auto& v : ckpt.at("embed").data()) v = 0.0;
  CHECK(global_sparsity(ckpt) == doctest::Approx(16.0 / static_cast<double>(total)).epsilon(1e-15));
}

TEST_CASE("evaluate dispatches by mode") {
  const auto ckpt = init_random_model(tiny_config(ModelMode::kMaskedDiffusion));
  const auto set = uniform_sequences(3, 10, 16, 2);
  const auto stats = collect_activations(ckpt, CalibrationSet{set, {}, 10, 0},
                                         std::vector<std::size_t>{1}, 2);
  const auto r = evaluate(ckpt, set, {}, &ckpt, &stats);
  CHECK(r.accuracy_kind == "masked");
  CHECK(r.recon_error.size() == 6);
  for (const auto& [name, e] : r.recon_error) CHECK(e == 0.0);
  const auto ar = init_random_model(tiny_config(ModelMode::kAutoregressive));
  CHECK(evaluate(ar, set, {}).accuracy_kind == "next_token");
}
