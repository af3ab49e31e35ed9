// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "sinkprune/calib.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "sinkprune/error.hpp"
#include "sinkprune/rng.hpp"

namespace sinkprune {

namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

std::string to_string(TokenizerKind kind) {
  return kind == TokenizerKind::kByte ? "byte" : "whitespace-hash";
}

TokenizerKind parse_tokenizer_kind(const std::string& text) {
  if (text == "byte") return TokenizerKind::kByte;
  if (text == "whitespace-hash" || text == "whitespace") {
    return TokenizerKind::kWhitespaceHash;
  }
  fail(ErrorCode::kInvalidArgument, "unknown tokenizer '" + text + "'");
}

TokenSequence tokenize(std::string_view text, TokenizerKind kind,
                       std::size_t vocab_size) {
  TokenSequence out;
  if (kind == TokenizerKind::kByte) {
    if (vocab_size < 257) {
      fail(ErrorCode::kVocabTooSmall,
           "byte tokenizer needs vocab_size >= 257, got " + std::to_string(vocab_size));
    }
    for (unsigned char c : text) out.push_back(c);
    return out;
  }
  if (vocab_size < 2) fail(ErrorCode::kVocabTooSmall, "vocab_size must be >= 2");
  const std::uint64_t modulus = vocab_size - 1;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) {
      out.push_back(static_cast<TokenId>(fnv1a(text.substr(start, i - start)) % modulus));
    }
  }
  return out;
}

Corpus load_corpus(std::string_view text, TokenizerKind kind, std::size_t vocab_size) {
  Corpus corpus;
  corpus.tokenizer = kind;
  corpus.vocab_size = vocab_size;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      TokenSequence doc = tokenize(current, kind, vocab_size);
      if (!doc.empty()) corpus.documents.push_back(std::move(doc));
      current.clear();
    }
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    if (is_blank(line)) {
      flush();
    } else {
      if (!current.empty()) current.push_back('\n');
      current.append(line);
    }
    pos = end + 1;
  }
  flush();
  return corpus;
}

Corpus load_corpus_file(const std::string& path, TokenizerKind kind,
                        std::size_t vocab_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingFile, "cannot open corpus " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_corpus(buf.str(), kind, vocab_size);
}

CalibrationSet sample_calibration(const Corpus& corpus, std::size_t n,
                                  std::size_t s_cal, std::uint64_t seed,
                                  std::span<const WindowRef> exclude,
                                  std::size_t exclude_len) {
  CalibrationSet set;
  set.seq_len = s_cal;
  set.seed = seed;
  if (n == 0) return set;
  if (s_cal == 0) fail(ErrorCode::kInvalidArgument, "calibration length must be > 0");

  auto overlaps_excluded = [&](std::size_t doc, std::size_t off) {
    for (const WindowRef& w : exclude) {
      if (w.document != doc) continue;
      if (off < w.offset + exclude_len && w.offset < off + s_cal) return true;
    }
    return false;
  };
  std::vector<WindowRef> valid;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    const std::size_t len = corpus.documents[d].size();
    if (len < s_cal) continue;
    for (std::size_t off = 0; off + s_cal <= len; ++off)
      if (!overlaps_excluded(d, off)) valid.push_back({d, off});
  }
  if (valid.empty()) {
    fail(ErrorCode::kCorpusTooShort,
         "no document admits a window of length " + std::to_string(s_cal));
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const WindowRef w = valid[rng.uniform_index(valid.size())];
    const auto& doc = corpus.documents[w.document];
    set.sequences.emplace_back(doc.begin() + static_cast<std::ptrdiff_t>(w.offset),
                               doc.begin() + static_cast<std::ptrdiff_t>(w.offset + s_cal));
    set.windows.push_back(w);
  }
  return set;
}

TokenSequence noise_at_timestep(std::span<const TokenId> seq, std::size_t t,
                                std::size_t total_steps, std::uint64_t seed,
                                const ModelConfig& config) {
  if (config.mode != ModelMode::kMaskedDiffusion) {
    fail(ErrorCode::kWrongMode,
         "noising applies to diffusion models; autoregressive calibration is clean");
  }
  if (total_steps == 0 || t < 1 || t > total_steps) {
    fail(ErrorCode::kInvalidTimestep,
         "timestep " + std::to_string(t) + " outside [1, " +
             std::to_string(total_steps) + "]");
  }
  TokenSequence out(seq.begin(), seq.end());
  const std::size_t n_mask = seq.size() * t / total_steps;
  Rng rng(seed);
  for (std::size_t pos : rng.sample_without_replacement(seq.size(), n_mask))
    out[pos] = config.mask_id();
  return out;
}

void LayerActivationStats::accumulate(const DenseMatrix& x,
                                      std::span<const double> omega) {
  const std::size_t c = dim();
  if (x.cols() != c) {
    fail(ErrorCode::kDimensionMismatch,
         "activation width " + std::to_string(x.cols()) + " vs accumulator " +
             std::to_string(c));
  }
  if (!omega.empty() && omega.size() != x.rows()) {
    fail(ErrorCode::kProfileLengthMismatch,
         "sink profile has " + std::to_string(omega.size()) + " positions, input has " +
             std::to_string(x.rows()));
  }
  std::vector<double> scaled(c);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    if (omega.empty()) {
      std::copy(row.begin(), row.end(), scaled.begin());
    } else {
      for (std::size_t a = 0; a < c; ++a) scaled[a] = omega[r] * row[a];
    }
    for (std::size_t a = 0; a < c; ++a) {
      const double xa = scaled[a];
      column_sq_norms[a] += xa * xa;
      auto h_row = hessian_acc.row(a);
      for (std::size_t b = a; b < c; ++b) h_row[b] += xa * scaled[b];
    }
  }
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = a + 1; b < c; ++b) hessian_acc(b, a) = hessian_acc(a, b);
  ++sample_count;
}

DenseMatrix LayerActivationStats::hessian() const {
  if (sample_count == 0) {
    fail(ErrorCode::kInvalidArgument, "activation statistics are empty");
  }
  DenseMatrix h = hessian_acc;
  for (double& v : h.data()) v /= static_cast<double>(sample_count);
  return h;
}

std::uint64_t noise_seed(std::uint64_t calib_seed, std::size_t sequence_index,
                         std::size_t t) {
  return derive_seed(calib_seed, sequence_index, t);
}

TokenSequence calibration_input(const NamedTensorCheckpoint& ckpt,
                                const CalibrationSet& calib, std::size_t index,
                                std::size_t t, std::size_t total_steps) {
  const TokenSequence& seq = calib.sequences.at(index);
  if (!ckpt.config.is_diffusion()) return seq;
  return noise_at_timestep(seq, t, total_steps, noise_seed(calib.seed, index, t),
                           ckpt.config);
}

namespace {

std::vector<std::size_t> effective_timesteps(const ModelConfig& config,
                                             std::span<const std::size_t> timesteps) {
  if (!config.is_diffusion()) return {1};
  if (timesteps.empty()) fail(ErrorCode::kEmptyTimestepSet, "timestep set is empty");
  return {timesteps.begin(), timesteps.end()};
}

}  // namespace

std::vector<AttentionTrace> collect_attention(const NamedTensorCheckpoint& ckpt,
                                              const CalibrationSet& calib,
                                              std::span<const std::size_t> timesteps,
                                              std::size_t total_steps) {
  const auto steps = effective_timesteps(ckpt.config, timesteps);
  std::vector<AttentionTrace> traces;
  traces.reserve(calib.sequences.size());
  for (std::size_t i = 0; i < calib.sequences.size(); ++i) {
    AttentionTrace trace;
    for (std::size_t t : steps) {
      const TokenSequence input = calibration_input(ckpt, calib, i, t, total_steps);
      ForwardResult fr = forward(ckpt, input, {.attention = true});
      trace.push(t, std::move(*fr.attention));
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

ActivationStatsMap collect_activations(const NamedTensorCheckpoint& ckpt,
                                       const CalibrationSet& calib,
                                       std::span<const std::size_t> timesteps,
                                       std::size_t total_steps,
                                       const SinkProfile* sink_profile) {
  const auto steps = effective_timesteps(ckpt.config, timesteps);
  if (sink_profile != nullptr && sink_profile->omega.size() != calib.seq_len) {
    fail(ErrorCode::kProfileLengthMismatch,
         "sink profile covers " + std::to_string(sink_profile->omega.size()) +
             " positions, calibration length is " + std::to_string(calib.seq_len));
  }
  ActivationStatsMap stats;
  for (const std::string& name : ckpt.prunable_names()) {
    LayerActivationStats s(ckpt.at(name).cols());
    s.sink_masked = sink_profile != nullptr;
    stats.emplace(name, std::move(s));
  }
  const std::span<const double> omega =
      sink_profile != nullptr ? std::span<const double>(sink_profile->omega)
                              : std::span<const double>();
  for (std::size_t i = 0; i < calib.sequences.size(); ++i) {
    if (calib.sequences[i].size() != calib.seq_len) {
      fail(ErrorCode::kMixedSequenceLengths, "calibration sequence length mismatch");
    }
    for (std::size_t t : steps) {
      const TokenSequence input = calibration_input(ckpt, calib, i, t, total_steps);
      ForwardResult fr = forward(ckpt, input, {.activations = true});
      for (auto& [name, s] : stats) s.accumulate(fr.activations.at(name), omega);
    }
  }
  return stats;
}

}  // namespace sinkprune
