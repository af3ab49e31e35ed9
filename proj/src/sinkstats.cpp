// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "sinkprune/sinkstats.hpp"

#include <algorithm>
#include <cmath>

#include "sinkprune/error.hpp"
#include "sinkprune/rng.hpp"

namespace sinkprune {

namespace {

constexpr double kRowSumTolerance = 1e-5;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double population_variance(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(values.size());
}

void require_non_degenerate(std::size_t seq_len) {
  if (seq_len < 2) {
    fail(ErrorCode::kDegenerateSequence,
         "sink statistics need at least 2 positions, got " + std::to_string(seq_len));
  }
}

}  // namespace

std::vector<double> incoming_mass(const DenseMatrix& attention) {
  if (!attention.is_square()) {
    fail(ErrorCode::kShapeMismatch, "attention matrix must be square");
  }
  const std::size_t s = attention.rows();
  std::vector<double> mass(s, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    const auto row = attention.row(i);
    double total = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      total += row[j];
      mass[j] += row[j];
    }
    if (std::abs(total - 1.0) > kRowSumTolerance) {
      fail(ErrorCode::kNotRowStochastic,
           "attention row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
  }
  return mass;
}

std::vector<double> cumulative_attention(const DenseMatrix& attention) {
  std::vector<double> mass = incoming_mass(attention);
  const double s = static_cast<double>(attention.rows());
  for (double& m : mass) m /= s;
  return mass;
}

std::vector<double> aggregate_mass(const AttentionSnapshot& snapshot,
                                   MassAggregation aggregation) {
  if (snapshot.maps.empty() ||
      snapshot.maps.size() != snapshot.n_layers * snapshot.n_heads) {
    fail(ErrorCode::kShapeMismatch, "snapshot map count does not match L*H");
  }
  const std::size_t s = snapshot.seq_len();
  std::vector<double> total(s, 0.0);
  for (const DenseMatrix& a : snapshot.maps) {
    if (a.rows() != s || a.cols() != s) {
      fail(ErrorCode::kShapeMismatch, "attention maps in one step differ in size");
    }
    const std::vector<double> m = aggregation == MassAggregation::kMeanOverQueries
                                      ? cumulative_attention(a)
                                      : incoming_mass(a);
    for (std::size_t j = 0; j < s; ++j) total[j] += m[j];
  }
  return total;
}

MassSeries mass_series(const AttentionTrace& trace, MassAggregation aggregation) {
  MassSeries series;
  series.aggregation = aggregation;
  series.steps.reserve(trace.size());
  for (const AttentionSnapshot& snap : trace.steps)
    series.steps.push_back(aggregate_mass(snap, aggregation));
  return series;
}

std::vector<double> sink_excess(std::span<const double> mass, double epsilon) {
  require_non_degenerate(mass.size());
  double total = 0.0;
  for (double m : mass) total += m;
  const double others = static_cast<double>(mass.size() - 1);
  std::vector<double> excess(mass.size());
  for (std::size_t j = 0; j < mass.size(); ++j)
    excess[j] = mass[j] - (total - mass[j]) / others - epsilon;
  return excess;
}

std::vector<std::size_t> detect_sinks(std::span<const double> mass, double epsilon) {
  const std::vector<double> excess = sink_excess(mass, epsilon);
  std::vector<std::size_t> sinks;
  for (std::size_t j = 0; j < excess.size(); ++j)
    if (excess[j] > 0.0) sinks.push_back(j);
  return sinks;
}

std::vector<double> soft_sink_score(std::span<const double> mass, double epsilon,
                                    double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::kInvalidArgument, "tau must be positive");
  std::vector<double> phi = sink_excess(mass, epsilon);
  for (double& v : phi) v = sigmoid(v / tau);
  return phi;
}

std::vector<double> average_sink_score(std::span<const std::vector<double>> scores) {
  if (scores.empty()) fail(ErrorCode::kEmptyTimestepSet, "no per-step scores to average");
  const std::size_t n = scores.front().size();
  std::vector<double> mean(n, 0.0);
  for (const auto& step : scores) {
    if (step.size() != n) {
      fail(ErrorCode::kShapeMismatch, "per-step sink scores differ in length");
    }
    for (std::size_t k = 0; k < n; ++k) mean[k] += step[k];
  }
  for (double& v : mean) v /= static_cast<double>(scores.size());
  return mean;
}

double spatial_variance(const MassSeries& series) {
  if (series.steps.empty()) {
    fail(ErrorCode::kEmptyTimestepSet, "spatial variance needs at least one step");
  }
  std::size_t s = 0;
  for (const auto& step : series.steps) s = std::max(s, step.size());
  require_non_degenerate(s);
  // Positions not yet present at a step (growing AR traces) received no mass.
  std::vector<double> mean(s, 0.0);
  for (const auto& step : series.steps)
    for (std::size_t i = 0; i < step.size(); ++i) mean[i] += step[i];
  for (double& v : mean) v /= static_cast<double>(series.steps.size());
  return population_variance(mean);
}

VarianceReport temporal_variance(const MassSeries& series, double epsilon) {
  VarianceReport report;
  report.spatial = spatial_variance(series);
  for (const auto& m : series.steps) {
    std::vector<std::size_t> sinks = detect_sinks(m, epsilon);
    double weight = 0.0;
    double moment = 0.0;
    for (std::size_t i : sinks) {
      weight += m[i];
      moment += m[i] * static_cast<double>(i);
    }
    const double centroid = weight > 0.0
                                ? moment / weight
                                : static_cast<double>(argmax_lowest(m));
    report.centroids.push_back(centroid);
    report.sink_sets.push_back(std::move(sinks));
  }
  report.temporal = population_variance(report.centroids);
  return report;
}

double default_tau(std::size_t n_layers, std::size_t n_heads, std::size_t seq_len) {
  return static_cast<double>(n_layers * n_heads) / static_cast<double>(seq_len);
}

double default_epsilon(std::size_t n_layers, std::size_t n_heads,
                       std::size_t seq_len) {
  return 0.5 * default_tau(n_layers, n_heads, seq_len);
}

std::vector<std::size_t> uniform_timesteps(std::size_t total_steps, std::size_t count) {
  if (count == 0) fail(ErrorCode::kEmptyTimestepSet, "timestep set must be non-empty");
  if (total_steps == 0 || count > total_steps) {
    fail(ErrorCode::kInvalidSteps,
         "cannot pick " + std::to_string(count) + " timesteps out of " +
             std::to_string(total_steps));
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 1; k <= count; ++k)
    out.push_back((k * total_steps + count - 1) / count);
  return out;
}

SinkProfile SinkProfile::identity(std::size_t seq_len) {
  SinkProfile p;
  p.phi_bar.assign(seq_len, 0.0);
  p.omega.assign(seq_len, 1.0);
  return p;
}

bool SinkProfile::is_identity() const {
  return std::all_of(omega.begin(), omega.end(), [](double w) { return w == 1.0; });
}

SinkProfile build_sink_profile(std::span<const AttentionTrace> traces,
                               std::span<const std::size_t> timesteps,
                               double epsilon, double tau) {
  if (timesteps.empty()) fail(ErrorCode::kEmptyTimestepSet, "timestep set is empty");
  if (traces.empty()) fail(ErrorCode::kInvalidArgument, "no calibration traces");
  if (epsilon < 0.0) fail(ErrorCode::kInvalidArgument, "epsilon must be >= 0");

  std::vector<std::vector<double>> scores;
  std::size_t seq_len = 0;
  for (const AttentionTrace& trace : traces) {
    for (std::size_t t : timesteps) {
      auto it = std::find(trace.step_ids.begin(), trace.step_ids.end(), t);
      if (it == trace.step_ids.end()) {
        fail(ErrorCode::kInvalidTimestep,
             "timestep " + std::to_string(t) + " is not present in a trace");
      }
      const AttentionSnapshot& snap = trace.steps[it - trace.step_ids.begin()];
      if (seq_len == 0) {
        seq_len = snap.seq_len();
      } else if (snap.seq_len() != seq_len) {
        fail(ErrorCode::kMixedSequenceLengths,
             "calibration snapshots have lengths " + std::to_string(seq_len) +
                 " and " + std::to_string(snap.seq_len()));
      }
      scores.push_back(soft_sink_score(aggregate_mass(snap), epsilon, tau));
    }
  }

  SinkProfile profile;
  profile.epsilon = epsilon;
  profile.tau = tau;
  profile.timesteps.assign(timesteps.begin(), timesteps.end());
  profile.phi_bar = average_sink_score(scores);
  profile.omega.resize(profile.phi_bar.size());
  for (std::size_t j = 0; j < profile.phi_bar.size(); ++j)
    profile.omega[j] = 1.0 - profile.phi_bar[j];
  return profile;
}

std::string to_string(SyntheticTraceKind kind) {
  switch (kind) {
    case SyntheticTraceKind::kStationary: return "stationary";
    case SyntheticTraceKind::kDrifting: return "drifting";
    case SyntheticTraceKind::kUniform: return "uniform";
  }
  return "unknown";
}

SyntheticTraceKind parse_synthetic_trace_kind(const std::string& text) {
  if (text == "stationary") return SyntheticTraceKind::kStationary;
  if (text == "drifting") return SyntheticTraceKind::kDrifting;
  if (text == "uniform") return SyntheticTraceKind::kUniform;
  fail(ErrorCode::kInvalidArgument, "unknown synthetic trace kind '" + text + "'");
}

AttentionTrace synthetic_trace(const SyntheticTraceSpec& spec) {
  const std::size_t s = spec.seq_len;
  require_non_degenerate(s);
  if (spec.n_steps == 0) fail(ErrorCode::kInvalidSteps, "synthetic trace needs steps");
  if (spec.sink_share < 0.0 || spec.sink_share > 1.0) {
    fail(ErrorCode::kInvalidArgument, "sink_share must lie in [0, 1]");
  }
  Rng rng(spec.seed);
  const double alpha = spec.sink_share;

  AttentionTrace trace;
  for (std::size_t t = 0; t < spec.n_steps; ++t) {
    DenseMatrix a(s, s);
    switch (spec.kind) {
      case SyntheticTraceKind::kStationary:
        a(0, 0) = 1.0;
        for (std::size_t i = 1; i < s; ++i) {
          a(i, 0) = alpha;
          const double rest = (1.0 - alpha) / static_cast<double>(i);
          for (std::size_t j = 1; j <= i; ++j) a(i, j) = rest;
        }
        break;
      case SyntheticTraceKind::kDrifting: {
        const double frac = spec.n_steps == 1
                                ? 0.0
                                : static_cast<double>(t) /
                                      static_cast<double>(spec.n_steps - 1);
        double pos = frac * static_cast<double>(s - 1);
        if (spec.jitter > 0.0) pos += spec.jitter * (2.0 * rng.uniform01() - 1.0);
        pos = std::clamp(std::round(pos), 0.0, static_cast<double>(s - 1));
        const auto sink = static_cast<std::size_t>(pos);
        const double rest = (1.0 - alpha) / static_cast<double>(s - 1);
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < s; ++j) a(i, j) = j == sink ? alpha : rest;
        break;
      }
      case SyntheticTraceKind::kUniform:
        for (double& v : a.data()) v = 1.0 / static_cast<double>(s);
        break;
    }
    AttentionSnapshot snap;
    snap.n_layers = spec.n_layers;
    snap.n_heads = spec.n_heads;
    snap.maps.assign(spec.n_layers * spec.n_heads, a);
    trace.push(t + 1, std::move(snap));
  }
  return trace;
}

}  // namespace sinkprune
