// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "sinkprune/error.hpp"
#include "sinkprune/io.hpp"

using namespace sinkprune;
namespace fs = std::filesystem;

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

NamedTensorCheckpoint small_model() {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 12;
  c.vocab_size = 20;
  c.max_seq_len = 10;
  c.seed = 77;
  return init_random_model(c);
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return b[at] | b[at + 1] << 8 | b[at + 2] << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

/// Byte positions of each manifest entry's offset field.
std::vector<std::size_t> offset_fields(const std::vector<std::uint8_t>& b) {
  std::size_t at = 8;
  at += 4 + read_u32(b, at);
  const std::uint32_t count = read_u32(b, at);
  at += 4;
  std::vector<std::size_t> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    at += 4 + read_u32(b, at);
    at += 16;
    out.push_back(at);
    at += 8;
  }
  return out;
}

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / "sinkprune_io_test";
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("checkpoint layout and round trip") {
  const auto ckpt = small_model();
  const auto bytes = encode_checkpoint(ckpt);
  CHECK(std::memcmp(bytes.data(), "SNKP", 4) == 0);
  CHECK(read_u32(bytes, 4) == 1);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.config == ckpt.config);
  CHECK(back == ckpt);
  CHECK(encode_checkpoint(back) == bytes);

  const std::string path = (temp_dir() / "m.snkp").string();
  write_checkpoint(ckpt, path);
  CHECK(read_checkpoint(path) == ckpt);
}

TEST_CASE("float32 payload is little-endian row-major") {
  auto ckpt = small_model();
  ckpt.at("layer.0.attn.q_proj")(0, 1) = 1.0;
  const auto bytes = encode_checkpoint(ckpt);
  // Find the q_proj entry and its payload offset.
  std::size_t at = 8;
  at += 4 + read_u32(bytes, at);
  const std::uint32_t count = read_u32(bytes, at);
  at += 4;
  std::size_t payload_offset = 0;
  std::vector<std::size_t> entry_offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32(bytes, at);
    const std::string name(bytes.begin() + static_cast<long>(at + 4),
                           bytes.begin() + static_cast<long>(at + 4 + len));
    at += 4 + len + 16;
    std::uint64_t off = 0;
    for (int k = 7; k >= 0; --k) off = off << 8 | bytes[at + k];
    if (name == "layer.0.attn.q_proj") payload_offset = off;
    at += 8;
  }
  const std::size_t p = at + payload_offset + 4;
  const std::uint32_t one = 0x3f800000u;
  CHECK(read_u32(bytes, p) == one);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto bytes = encode_checkpoint(small_model());
  auto truncated = bytes;
  truncated.pop_back();
  CHECK(code_of([&] { decode_checkpoint(truncated); }) == ErrorCode::kTruncatedFile);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK(code_of([&] { decode_checkpoint(magic); }) == ErrorCode::kBadMagic);

  auto version = bytes;
  version[4] = 2;
  CHECK(code_of([&] { decode_checkpoint(version); }) == ErrorCode::kUnsupportedVersion);

  auto overlap = bytes;
  const auto fields = offset_fields(overlap);
  REQUIRE(fields.size() >= 2);
  for (int k = 0; k < 8; ++k) overlap[fields[1] + k] = overlap[fields[0] + k];
  CHECK(code_of([&] { decode_checkpoint(overlap); }) == ErrorCode::kManifestOverlap);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of([&] { decode_checkpoint(trailing); }) == ErrorCode::kCorruptFile);

  const std::vector<std::uint8_t> header_only(bytes.begin(), bytes.begin() + 10);
  CHECK(code_of([&] { decode_checkpoint(header_only); }) == ErrorCode::kTruncatedFile);
  CHECK(code_of([] { read_checkpoint("/nonexistent/x.snkp"); }) == ErrorCode::kMissingFile);
}

TEST_CASE("canonical JSON") {
  nlohmann::json j{{"b", 1.5}, {"a", {1, 2}}, {"c", 0.1}};
  const std::string once = canonical_json(j);
  CHECK(once == canonical_json(nlohmann::json::parse(once)));
  CHECK(once.find("\"a\"") < once.find("\"b\""));
  CHECK(once.back() == '\n');
  CHECK(once.find("0.1") != std::string::npos);

  nlohmann::json bad{{"x", std::numeric_limits<double>::quiet_NaN()}};
  CHECK(code_of([&] { canonical_json(bad); }) == ErrorCode::kNonFiniteValue);
  nlohmann::json nested{{"x", {{"y", std::vector<double>{1.0, INFINITY}}}}};
  CHECK(code_of([&] { canonical_json(nested); }) == ErrorCode::kNonFiniteValue);
}

TEST_CASE("reports serialize identically twice") {
  PruneReport r;
  r.run_config = {{"criterion", "wanda"}, {"sparsity", 0.5}};
  r.layers.push_back({"layer.0.attn.q_proj", "wanda", 0.5, 1.25});
  r.sink_profile = SinkProfile::identity(3);
  r.global_sparsity = 0.5;
  const std::string path = (temp_dir() / "r.json").string();
  write_report(r, path);
  const std::string first = read_text(path);
  write_report(r, path);
  CHECK(read_text(path) == first);
  const auto j = read_json(path);
  CHECK(j.at("tool_version") == kToolVersion);
  CHECK(j.at("layers")[0].at("name") == "layer.0.attn.q_proj");

  EvalReport e;
  e.perplexity = std::nan("");
  r.eval = e;
  CHECK(code_of([&] { write_report(r, path); }) == ErrorCode::kNonFiniteValue);
}

TEST_CASE("CSV rendering") {
  CsvTable empty{{"statistic", "value"}, {}};
  CHECK(render_csv(empty) == "statistic,value\r\n");
  CsvTable t{{"name", "note"}, {{"a,b", "say \"hi\""}, {"plain", "x"}}};
  CHECK(render_csv(t) == "name,note\r\n\"a,b\",\"say \"\"hi\"\"\"\r\nplain,x\r\n");
  CsvTable ragged{{"a", "b"}, {{"1"}}};
  CHECK(code_of([&] { render_csv(ragged); }) == ErrorCode::kShapeMismatch);

  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(2.0) == "2");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(code_of([] { format_number(INFINITY); }) == ErrorCode::kNonFiniteValue);
}

TEST_CASE("model config JSON round trip") {
  const auto c = small_model().config;
  CHECK(config_from_json(config_to_json(c)) == c);
}
