// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sinkprune/eval.hpp"
#include "sinkprune/model.hpp"
#include "sinkprune/prune.hpp"
#include "sinkprune/sinkstats.hpp"

namespace sinkprune {

inline constexpr char kCheckpointMagic[4] = {'S', 'N', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

// Checkpoint layout, all integers little-endian:
//   "SNKP" | u32 version | u32 config_len | config JSON |
//   u32 count | count x (u32 name_len | name | u64 rows | u64 cols | u64 offset) |
//   payload
// Offsets are relative to the payload start; tensors are row-major IEEE-754
// f32, so values are rounded to single precision on write.
std::vector<std::uint8_t> encode_checkpoint(const NamedTensorCheckpoint& ckpt);
NamedTensorCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const NamedTensorCheckpoint& ckpt, const std::string& path);
NamedTensorCheckpoint read_checkpoint(const std::string& path);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

/// Canonical JSON text: sorted keys, shortest round-trip numbers, 2-space
/// indent, trailing newline. Throws NonFiniteValue on NaN or infinity.
std::string canonical_json(const nlohmann::json& j);
void write_json(const nlohmann::json& j, const std::string& path);
nlohmann::json read_json(const std::string& path);

struct LayerReportEntry {
  std::string name;
  std::string criterion;
  double achieved_sparsity = 0.0;
  double recon_error = 0.0;
};

struct PruneReport {
  nlohmann::json run_config;  // effective settings echo
  std::vector<LayerReportEntry> layers;
  std::vector<HeadPruneLayer> heads;
  std::optional<SinkProfile> sink_profile;
  std::optional<VarianceReport> variance;
  std::optional<EvalReport> eval;
  std::uint64_t seed_model = 0;
  std::uint64_t seed_calib = 0;
  std::uint64_t seed_eval = 0;
  double global_sparsity = 0.0;
  std::string tool_version = kToolVersion;
};

nlohmann::json to_json(const SinkProfile& profile);
nlohmann::json to_json(const VarianceReport& report);
nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const PruneReport& report);

void write_report(const PruneReport& report, const std::string& path);

/// Shortest round-trip decimal; throws NonFiniteValue on NaN or infinity.
std::string format_number(double value);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// RFC-4180: CRLF line endings, fields quoted when they contain a comma,
/// quote or line break. The header row is always written.
std::string render_csv(const CsvTable& table);
void write_csv(const CsvTable& table, const std::string& path);

void write_text(const std::string& text, const std::string& path);
std::string read_text(const std::string& path);

}  // namespace sinkprune
