// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sinkprune/numerics.hpp"

namespace sinkprune {

enum class ModelMode { kAutoregressive, kMaskedDiffusion };

std::string to_string(ModelMode mode);
ModelMode parse_model_mode(const std::string& text);

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

struct ModelConfig {
  ModelMode mode = ModelMode::kMaskedDiffusion;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 128;
  std::size_t max_seq_len = 128;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Reserved id in diffusion mode; always vocab_size - 1.
  TokenId mask_id() const { return static_cast<TokenId>(vocab_size - 1); }
  bool is_diffusion() const { return mode == ModelMode::kMaskedDiffusion; }

  /// Throws InvalidConfig on violated invariants.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// The six prunable linear layers of every transformer block.
inline constexpr const char* kLayerTensorKinds[] = {
    "attn.q_proj", "attn.k_proj", "attn.v_proj",
    "attn.o_proj", "ffn.ff_up",   "ffn.ff_down"};

inline constexpr const char* kEmbeddingName = "embed";
inline constexpr const char* kUnembeddingName = "unembed";

/// "layer.<index>.<kind>", e.g. "layer.3.attn.q_proj".
std::string layer_tensor_name(std::size_t layer, std::string_view kind);

/// Named weights of a toy transformer. Linear weights are stored
/// C_out x C_in (y = x W^T). The embedding table holds vocab_size token rows
/// followed by max_seq_len learned position rows.
struct NamedTensorCheckpoint {
  ModelConfig config;
  std::map<std::string, DenseMatrix> tensors;

  const DenseMatrix& at(const std::string& name) const;
  DenseMatrix& at(const std::string& name);

  /// Names of all prunable linear layers, in canonical (sorted) order.
  std::vector<std::string> prunable_names() const;

  /// Throws ShapeMismatch when the tensor set or shapes disagree with config.
  void validate() const;

  friend bool operator==(const NamedTensorCheckpoint&,
                         const NamedTensorCheckpoint&) = default;
};

NamedTensorCheckpoint init_random_model(const ModelConfig& config);

/// Attention maps of one forward pass: one S x S matrix per (layer, head).
struct AttentionSnapshot {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::vector<DenseMatrix> maps;  // index = layer * n_heads + head

  const DenseMatrix& at(std::size_t layer, std::size_t head) const {
    return maps[layer * n_heads + head];
  }
  std::size_t seq_len() const { return maps.empty() ? 0 : maps.front().rows(); }
};

/// Attention snapshots over generation or denoising steps. `step_ids` labels
/// each snapshot (1-based diffusion timestep or decode step).
struct AttentionTrace {
  std::vector<std::size_t> step_ids;
  std::vector<AttentionSnapshot> steps;

  std::size_t size() const { return steps.size(); }
  void push(std::size_t step_id, AttentionSnapshot snapshot) {
    step_ids.push_back(step_id);
    steps.push_back(std::move(snapshot));
  }
};

struct CaptureFlags {
  bool attention = false;
  bool activations = false;
};

struct ForwardResult {
  DenseMatrix logits;  // S x V
  std::optional<AttentionSnapshot> attention;
  /// Per linear-layer input X (S x C_in); row i is sequence position i.
  std::map<std::string, DenseMatrix> activations;
};

ForwardResult forward(const NamedTensorCheckpoint& ckpt,
                      std::span<const TokenId> tokens, CaptureFlags capture);

struct GenerationResult {
  TokenSequence sequence;
  AttentionTrace trace;
  /// Sequence state after each step (diffusion) or after each emitted token.
  std::vector<TokenSequence> step_sequences;
};

/// Greedy autoregressive decoding. Step t (0-based) runs over the first
/// |prompt| + t tokens and appends one token.
GenerationResult decode_ar(const NamedTensorCheckpoint& ckpt,
                           std::span<const TokenId> prompt, std::size_t n_new);

enum class UnmaskSchedule { kConfidence, kRandom };

/// Masked-diffusion denoising over `n_steps` steps. Committed tokens stay
/// frozen; each step commits ceil(remaining / steps_left) positions.
GenerationResult denoise_diffusion(const NamedTensorCheckpoint& ckpt,
                                   std::span<const TokenId> prompt,
                                   std::size_t gen_len, std::size_t n_steps,
                                   UnmaskSchedule schedule,
                                   std::uint64_t seed = 0);

/// Lowest index of the maximum; used for every greedy choice.
std::size_t argmax_lowest(std::span<const double> values);

}  // namespace sinkprune
