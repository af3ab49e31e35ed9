// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "sinkprune/eval.hpp"

#include <algorithm>
#include <cmath>

#include "sinkprune/error.hpp"
#include "sinkprune/rng.hpp"

namespace sinkprune {

namespace {

void require_diffusion(const ModelConfig& config, const char* what) {
  if (!config.is_diffusion()) {
    fail(ErrorCode::kWrongMode, std::string(what) + " requires a masked-diffusion model");
  }
}

void require_autoregressive(const ModelConfig& config, const char* what) {
  if (config.is_diffusion()) {
    fail(ErrorCode::kWrongMode, std::string(what) + " requires an autoregressive model");
  }
}

double log_prob(std::span<const double> logits, std::size_t target) {
  double peak = logits[0];
  for (double v : logits) peak = std::max(peak, v);
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  return logits[target] - peak - std::log(total);
}

}  // namespace

double reconstruction_error(const DenseMatrix& w, const DenseMatrix& w_tilde,
                            const LayerActivationStats& stats) {
  if (w.rows() != w_tilde.rows() || w.cols() != w_tilde.cols() ||
      stats.dim() != w.cols()) {
    fail(ErrorCode::kDimensionMismatch, "reconstruction_error shape mismatch");
  }
  const DenseMatrix& h = stats.hessian_acc;
  const std::size_t c = w.cols();
  std::vector<double> delta(c);
  std::vector<double> hd(c);
  double total = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      delta[j] = w(r, j) - w_tilde(r, j);
      any = any || delta[j] != 0.0;
    }
    if (!any) continue;
    for (std::size_t i = 0; i < c; ++i) {
      double acc = 0.0;
      const auto hrow = h.row(i);
      for (std::size_t j = 0; j < c; ++j) acc += hrow[j] * delta[j];
      hd[i] = acc;
    }
    for (std::size_t i = 0; i < c; ++i) total += delta[i] * hd[i];
  }
  return std::max(total, 0.0);
}

double masked_accuracy(const NamedTensorCheckpoint& ckpt,
                       std::span<const TokenSequence> eval_set, double mask_ratio,
                       std::uint64_t seed) {
  require_diffusion(ckpt.config, "masked_accuracy");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "mask ratio must lie in (0, 1)");
  }
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t s = 0; s < eval_set.size(); ++s) {
    const TokenSequence& seq = eval_set[s];
    const auto n_mask =
        static_cast<std::size_t>(std::floor(mask_ratio * static_cast<double>(seq.size())));
    if (n_mask == 0) continue;
    Rng rng(derive_seed(seed, s));
    const auto positions = rng.sample_without_replacement(seq.size(), n_mask);
    TokenSequence input = seq;
    for (std::size_t p : positions) input[p] = ckpt.config.mask_id();
    const ForwardResult fr = forward(ckpt, input, {});
    for (std::size_t p : positions) {
      correct += argmax_lowest(fr.logits.row(p)) == seq[p] ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double pseudo_perplexity(const NamedTensorCheckpoint& ckpt,
                         std::span<const TokenSequence> eval_set, std::uint64_t seed,
                         std::size_t positions_per_sequence) {
  require_diffusion(ckpt.config, "pseudo_perplexity");
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < eval_set.size(); ++s) {
    const TokenSequence& seq = eval_set[s];
    std::vector<std::size_t> positions;
    if (positions_per_sequence == 0 || positions_per_sequence >= seq.size()) {
      for (std::size_t p = 0; p < seq.size(); ++p) positions.push_back(p);
    } else {
      Rng rng(derive_seed(seed, s));
      positions = rng.sample_without_replacement(seq.size(), positions_per_sequence);
      std::sort(positions.begin(), positions.end());
    }
    for (std::size_t p : positions) {
      TokenSequence input = seq;
      input[p] = ckpt.config.mask_id();
      const ForwardResult fr = forward(ckpt, input, {});
      nll -= log_prob(fr.logits.row(p), seq[p]);
      ++count;
    }
  }
  if (count == 0) return 1.0;
  return std::max(1.0, std::exp(nll / static_cast<double>(count)));
}

double next_token_accuracy(const NamedTensorCheckpoint& ckpt,
                           std::span<const TokenSequence> eval_set) {
  require_autoregressive(ckpt.config, "next_token_accuracy");
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const TokenSequence& seq : eval_set) {
    if (seq.size() < 2) continue;
    const ForwardResult fr = forward(ckpt, seq, {});
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      correct += argmax_lowest(fr.logits.row(i)) == seq[i + 1] ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double next_token_perplexity(const NamedTensorCheckpoint& ckpt,
                             std::span<const TokenSequence> eval_set) {
  require_autoregressive(ckpt.config, "next_token_perplexity");
  double nll = 0.0;
  std::size_t count = 0;
  for (const TokenSequence& seq : eval_set) {
    if (seq.size() < 2) continue;
    const ForwardResult fr = forward(ckpt, seq, {});
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      nll -= log_prob(fr.logits.row(i), seq[i + 1]);
      ++count;
    }
  }
  if (count == 0) return 1.0;
  return std::max(1.0, std::exp(nll / static_cast<double>(count)));
}

double global_sparsity(const NamedTensorCheckpoint& ckpt) {
  std::size_t zeros = 0;
  std::size_t total = 0;
  for (const std::string& name : ckpt.prunable_names()) {
    const DenseMatrix& w = ckpt.at(name);
    zeros += static_cast<std::size_t>(
        std::count(w.data().begin(), w.data().end(), 0.0));
    total += w.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

EvalReport evaluate(const NamedTensorCheckpoint& ckpt,
                    std::span<const TokenSequence> eval_set, const EvalOptions& options,
                    const NamedTensorCheckpoint* reference,
                    const ActivationStatsMap* stats) {
  EvalReport report;
  if (ckpt.config.is_diffusion()) {
    report.accuracy_kind = "masked";
    report.accuracy = masked_accuracy(ckpt, eval_set, options.mask_ratio, options.seed);
    report.perplexity = pseudo_perplexity(ckpt, eval_set, options.seed,
                                          options.ppl_positions_per_sequence);
  } else {
    report.accuracy_kind = "next_token";
    report.accuracy = next_token_accuracy(ckpt, eval_set);
    report.perplexity = next_token_perplexity(ckpt, eval_set);
  }
  report.global_sparsity = global_sparsity(ckpt);
  if (reference != nullptr && stats != nullptr) {
    for (const std::string& name : ckpt.prunable_names()) {
      auto it = stats->find(name);
      if (it == stats->end()) continue;
      report.recon_error[name] =
          reconstruction_error(reference->at(name), ckpt.at(name), it->second);
    }
  }
  return report;
}

}  // namespace sinkprune
