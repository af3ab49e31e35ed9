// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sinkprune/model.hpp"
#include "sinkprune/numerics.hpp"

namespace sinkprune {

enum class MassAggregation { kSumOverQueries, kMeanOverQueries };

/// Position-level attention mass per step. Steps may have different
/// lengths (autoregressive traces grow by one position per step).
struct MassSeries {
  MassAggregation aggregation = MassAggregation::kSumOverQueries;
  std::vector<std::vector<double>> steps;

  std::size_t n_steps() const { return steps.size(); }
};

/// Column sums of a row-stochastic attention matrix: m(i) = sum_j a(j, i).
/// Throws NotRowStochastic when any row sum is off by more than 1e-5.
std::vector<double> incoming_mass(const DenseMatrix& attention);

/// incoming_mass / S.
std::vector<double> cumulative_attention(const DenseMatrix& attention);

/// Sum of per-(layer, head) masses. With kMeanOverQueries this is the
/// pruning-metric mass and totals L*H; with kSumOverQueries it totals L*H*S.
std::vector<double> aggregate_mass(
    const AttentionSnapshot& snapshot,
    MassAggregation aggregation = MassAggregation::kMeanOverQueries);

MassSeries mass_series(const AttentionTrace& trace, MassAggregation aggregation);

/// m(j) minus the mean of the other positions' masses minus epsilon.
/// Shared by the hard and soft criteria so both agree on every position.
std::vector<double> sink_excess(std::span<const double> mass, double epsilon);

/// Positions whose mass exceeds the mean of all others by more than epsilon.
std::vector<std::size_t> detect_sinks(std::span<const double> mass, double epsilon);

/// sigmoid(sink_excess / tau).
std::vector<double> soft_sink_score(std::span<const double> mass, double epsilon,
                                    double tau);

std::vector<double> average_sink_score(std::span<const std::vector<double>> scores);

double spatial_variance(const MassSeries& series);

struct VarianceReport {
  double spatial = 0.0;
  double temporal = 0.0;
  std::vector<double> centroids;
  std::vector<std::vector<std::size_t>> sink_sets;
};

/// Sink centroid per step (argmax fallback on an empty sink set) and the
/// population variance of those centroids. Also fills the spatial variance.
VarianceReport temporal_variance(const MassSeries& series, double epsilon);

/// Default temperature: the mean per-position mass L*H/S.
double default_tau(std::size_t n_layers, std::size_t n_heads, std::size_t seq_len);
/// Default threshold: half the mean per-position mass.
double default_epsilon(std::size_t n_layers, std::size_t n_heads,
                       std::size_t seq_len);

/// K uniformly spaced 1-based timesteps in [1, T], ending at T.
std::vector<std::size_t> uniform_timesteps(std::size_t total_steps, std::size_t count);

struct SinkProfile {
  double epsilon = 0.0;
  double tau = 1.0;
  std::vector<std::size_t> timesteps;
  std::vector<double> phi_bar;
  std::vector<double> omega;

  /// Profile with omega == 1 everywhere (phi_bar == 0).
  static SinkProfile identity(std::size_t seq_len);
  bool is_identity() const;
};

/// Averages soft sink scores over every (trace, timestep) pair. Each trace
/// must contain a snapshot labelled with every id in `timesteps`.
SinkProfile build_sink_profile(std::span<const AttentionTrace> traces,
                               std::span<const std::size_t> timesteps,
                               double epsilon, double tau);

/// Scripted attention traces for exercising the statistics without a model.
enum class SyntheticTraceKind { kStationary, kDrifting, kUniform };

std::string to_string(SyntheticTraceKind kind);
SyntheticTraceKind parse_synthetic_trace_kind(const std::string& text);

struct SyntheticTraceSpec {
  SyntheticTraceKind kind = SyntheticTraceKind::kStationary;
  std::size_t seq_len = 32;
  std::size_t n_steps = 16;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  /// Fraction of each query's attention placed on the sink.
  double sink_share = 0.6;
  /// Per-step random jitter of the drifting sink location, in positions.
  double jitter = 0.0;
  std::uint64_t seed = 0;
};

/// kStationary: causal rows with a fixed sink at position 0 (AR-like).
/// kDrifting: bidirectional rows whose sink moves from the first to the last
/// position across steps (diffusion-like). kUniform: uniform bidirectional rows.
AttentionTrace synthetic_trace(const SyntheticTraceSpec& spec);

}  // namespace sinkprune
