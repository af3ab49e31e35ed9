// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "sinkprune/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sinkprune/error.hpp"
#include "sinkprune/rng.hpp"

namespace sinkprune {

namespace {

constexpr double kNormEps = 1e-6;

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void rms_norm_rows(const DenseMatrix& x, DenseMatrix& out) {
  out = DenseMatrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    double ms = 0.0;
    for (double v : row) ms += v * v;
    ms /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(ms + kNormEps);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) dst[j] = row[j] * inv;
  }
}

double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

void softmax_row(std::span<double> row, std::size_t valid) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < valid; ++j) peak = std::max(peak, row[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < valid; ++j) {
    row[j] = std::exp(row[j] - peak);
    total += row[j];
  }
  for (std::size_t j = 0; j < valid; ++j) row[j] /= total;
  for (std::size_t j = valid; j < row.size(); ++j) row[j] = 0.0;
}

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>
expected_shapes(const ModelConfig& c) {
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> out;
  out.push_back({kEmbeddingName, {c.vocab_size + c.max_seq_len, c.d_model}});
  out.push_back({kUnembeddingName, {c.vocab_size, c.d_model}});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    out.push_back({layer_tensor_name(l, "attn.q_proj"), {c.d_model, c.d_model}});
    out.push_back({layer_tensor_name(l, "attn.k_proj"), {c.d_model, c.d_model}});
    out.push_back({layer_tensor_name(l, "attn.v_proj"), {c.d_model, c.d_model}});
    out.push_back({layer_tensor_name(l, "attn.o_proj"), {c.d_model, c.d_model}});
    out.push_back({layer_tensor_name(l, "ffn.ff_up"), {c.d_ff, c.d_model}});
    out.push_back({layer_tensor_name(l, "ffn.ff_down"), {c.d_model, c.d_ff}});
  }
  return out;
}

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.size() > config.max_seq_len) {
    fail(ErrorCode::kSequenceTooLong,
         "sequence length " + std::to_string(tokens.size()) + " exceeds " +
             std::to_string(config.max_seq_len));
  }
  for (TokenId t : tokens) {
    if (t >= config.vocab_size) {
      fail(ErrorCode::kTokenOutOfRange,
           "token id " + std::to_string(t) + " >= vocab size " +
               std::to_string(config.vocab_size));
    }
  }
}

}  // namespace

std::string to_string(ModelMode mode) {
  return mode == ModelMode::kAutoregressive ? "autoregressive" : "masked_diffusion";
}

ModelMode parse_model_mode(const std::string& text) {
  if (text == "autoregressive" || text == "ar") return ModelMode::kAutoregressive;
  if (text == "masked_diffusion" || text == "dlm") return ModelMode::kMaskedDiffusion;
  fail(ErrorCode::kInvalidConfig, "unknown model mode '" + text + "'");
}

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0 ||
      max_seq_len == 0) {
    fail(ErrorCode::kInvalidConfig, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    fail(ErrorCode::kInvalidConfig,
         "d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
             std::to_string(n_heads));
  }
  if (vocab_size < 2) {
    fail(ErrorCode::kInvalidConfig, "vocab_size must be at least 2");
  }
}

std::string layer_tensor_name(std::size_t layer, std::string_view kind) {
  return "layer." + std::to_string(layer) + "." + std::string(kind);
}

const DenseMatrix& NamedTensorCheckpoint::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorCode::kShapeMismatch, "missing tensor " + name);
  return it->second;
}

DenseMatrix& NamedTensorCheckpoint::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorCode::kShapeMismatch, "missing tensor " + name);
  return it->second;
}

std::vector<std::string> NamedTensorCheckpoint::prunable_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : tensors) {
    if (name != kEmbeddingName && name != kUnembeddingName) names.push_back(name);
  }
  return names;
}

void NamedTensorCheckpoint::validate() const {
  config.validate();
  const auto shapes = expected_shapes(config);
  if (tensors.size() != shapes.size()) {
    fail(ErrorCode::kShapeMismatch,
         "checkpoint has " + std::to_string(tensors.size()) + " tensors, expected " +
             std::to_string(shapes.size()));
  }
  for (const auto& [name, shape] : shapes) {
    const DenseMatrix& m = at(name);
    if (m.rows() != shape.first || m.cols() != shape.second) {
      fail(ErrorCode::kShapeMismatch,
           name + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
               ", expected " + std::to_string(shape.first) + "x" +
               std::to_string(shape.second));
    }
  }
}

NamedTensorCheckpoint init_random_model(const ModelConfig& config) {
  config.validate();
  NamedTensorCheckpoint ckpt;
  ckpt.config = config;
  // Uniform on [-sqrt(3), sqrt(3)] / sqrt(d_model): zero mean, std 1/sqrt(d).
  const double half_width = std::sqrt(3.0 / static_cast<double>(config.d_model));
  for (const auto& [name, shape] : expected_shapes(config)) {
    Rng rng(derive_seed(config.seed, fnv1a(name)));
    DenseMatrix m(shape.first, shape.second);
    for (double& v : m.data()) {
      // Stored as f32 on disk; keep the in-memory model on the same grid.
      v = static_cast<float>((2.0 * rng.uniform01() - 1.0) * half_width);
    }
    ckpt.tensors.emplace(name, std::move(m));
  }
  return ckpt;
}

ForwardResult forward(const NamedTensorCheckpoint& ckpt,
                      std::span<const TokenId> tokens, CaptureFlags capture) {
  const ModelConfig& cfg = ckpt.config;
  check_tokens(cfg, tokens);
  const std::size_t seq = tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t n_heads = cfg.n_heads;
  const std::size_t dh = cfg.head_dim();
  const bool causal = cfg.mode == ModelMode::kAutoregressive;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardResult result;
  if (capture.attention) {
    result.attention.emplace();
    result.attention->n_layers = cfg.n_layers;
    result.attention->n_heads = n_heads;
    result.attention->maps.reserve(cfg.n_layers * n_heads);
  }

  const DenseMatrix& embed = ckpt.at(kEmbeddingName);
  DenseMatrix x(seq, d);
  for (std::size_t i = 0; i < seq; ++i) {
    const auto tok = embed.row(tokens[i]);
    const auto pos = embed.row(cfg.vocab_size + i);
    auto dst = x.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] = tok[j] + pos[j];
  }

  DenseMatrix h;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string q_name = layer_tensor_name(l, "attn.q_proj");
    const std::string k_name = layer_tensor_name(l, "attn.k_proj");
    const std::string v_name = layer_tensor_name(l, "attn.v_proj");
    const std::string o_name = layer_tensor_name(l, "attn.o_proj");
    const std::string up_name = layer_tensor_name(l, "ffn.ff_up");
    const std::string down_name = layer_tensor_name(l, "ffn.ff_down");

    rms_norm_rows(x, h);
    if (capture.activations) {
      result.activations[q_name] = h;
      result.activations[k_name] = h;
      result.activations[v_name] = h;
    }
    const DenseMatrix q = matmul_transposed(h, ckpt.at(q_name));
    const DenseMatrix k = matmul_transposed(h, ckpt.at(k_name));
    const DenseMatrix v = matmul_transposed(h, ckpt.at(v_name));

    DenseMatrix ctx(seq, d);
    for (std::size_t head = 0; head < n_heads; ++head) {
      const std::size_t off = head * dh;
      DenseMatrix attn(seq, seq);
      for (std::size_t i = 0; i < seq; ++i) {
        auto row = attn.row(i);
        const std::size_t valid = causal ? i + 1 : seq;
        for (std::size_t j = 0; j < valid; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
          row[j] = s * scale;
        }
        softmax_row(row, valid);
        for (std::size_t j = 0; j < valid; ++j) {
          const double a = row[j];
          for (std::size_t c = 0; c < dh; ++c) ctx(i, off + c) += a * v(j, off + c);
        }
      }
      if (capture.attention) result.attention->maps.push_back(std::move(attn));
    }
    if (capture.activations) result.activations[o_name] = ctx;
    const DenseMatrix attn_out = matmul_transposed(ctx, ckpt.at(o_name));
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += attn_out.data()[i];

    rms_norm_rows(x, h);
    if (capture.activations) result.activations[up_name] = h;
    DenseMatrix up = matmul_transposed(h, ckpt.at(up_name));
    for (double& val : up.data()) val = gelu(val);
    if (capture.activations) result.activations[down_name] = up;
    const DenseMatrix ff_out = matmul_transposed(up, ckpt.at(down_name));
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += ff_out.data()[i];
  }

  rms_norm_rows(x, h);
  result.logits = matmul_transposed(h, ckpt.at(kUnembeddingName));
  return result;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

GenerationResult decode_ar(const NamedTensorCheckpoint& ckpt,
                           std::span<const TokenId> prompt, std::size_t n_new) {
  if (ckpt.config.mode != ModelMode::kAutoregressive) {
    fail(ErrorCode::kWrongMode, "decode_ar requires an autoregressive model");
  }
  GenerationResult out;
  out.sequence.assign(prompt.begin(), prompt.end());
  if (n_new == 0) return out;
  if (prompt.empty()) {
    fail(ErrorCode::kInvalidArgument, "decode_ar needs a non-empty prompt");
  }
  if (prompt.size() + n_new > ckpt.config.max_seq_len) {
    fail(ErrorCode::kSequenceTooLong, "prompt plus new tokens exceeds max_seq_len");
  }
  for (std::size_t t = 0; t < n_new; ++t) {
    ForwardResult fr = forward(ckpt, out.sequence, {.attention = true});
    const auto last = fr.logits.row(fr.logits.rows() - 1);
    out.sequence.push_back(static_cast<TokenId>(argmax_lowest(last)));
    out.trace.push(t + 1, std::move(*fr.attention));
    out.step_sequences.push_back(out.sequence);
  }
  return out;
}

GenerationResult denoise_diffusion(const NamedTensorCheckpoint& ckpt,
                                   std::span<const TokenId> prompt,
                                   std::size_t gen_len, std::size_t n_steps,
                                   UnmaskSchedule schedule, std::uint64_t seed) {
  const ModelConfig& cfg = ckpt.config;
  if (cfg.mode != ModelMode::kMaskedDiffusion) {
    fail(ErrorCode::kWrongMode, "denoise_diffusion requires a masked-diffusion model");
  }
  if (n_steps == 0) fail(ErrorCode::kInvalidSteps, "denoising needs at least one step");
  const TokenId mask = cfg.mask_id();

  GenerationResult out;
  out.sequence.assign(prompt.begin(), prompt.end());
  out.sequence.resize(prompt.size() + gen_len, mask);
  check_tokens(cfg, out.sequence);

  Rng rng(seed);
  std::size_t remaining = gen_len;
  for (std::size_t step = 0; step < n_steps; ++step) {
    ForwardResult fr = forward(ckpt, out.sequence, {.attention = true});
    const std::size_t steps_left = n_steps - step;
    const std::size_t commit = (remaining + steps_left - 1) / steps_left;

    std::vector<std::size_t> masked;
    for (std::size_t i = prompt.size(); i < out.sequence.size(); ++i)
      if (out.sequence[i] == mask) masked.push_back(i);

    // Predicted token per masked position excludes the MASK id itself.
    auto predict = [&](std::size_t pos, double* confidence) {
      const auto row = fr.logits.row(pos);
      const std::size_t best = argmax_lowest(row.first(mask));
      if (confidence != nullptr) {
        double total = 0.0;
        for (double v : row) total += std::exp(v - row[best]);
        *confidence = 1.0 / total;
      }
      return static_cast<TokenId>(best);
    };

    std::vector<std::size_t> chosen;
    if (schedule == UnmaskSchedule::kConfidence) {
      std::vector<std::pair<double, std::size_t>> ranked;
      for (std::size_t pos : masked) {
        double conf = 0.0;
        predict(pos, &conf);
        ranked.emplace_back(conf, pos);
      }
      std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::size_t i = 0; i < commit && i < ranked.size(); ++i)
        chosen.push_back(ranked[i].second);
    } else {
      for (std::size_t idx : rng.sample_without_replacement(masked.size(), commit))
        chosen.push_back(masked[idx]);
    }
    for (std::size_t pos : chosen) out.sequence[pos] = predict(pos, nullptr);
    remaining -= chosen.size();
    out.trace.push(step + 1, std::move(*fr.attention));
    out.step_sequences.push_back(out.sequence);
  }
  return out;
}

}  // namespace sinkprune
