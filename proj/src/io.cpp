// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "sinkprune/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "sinkprune/error.hpp"

namespace sinkprune {

namespace {

using json = nlohmann::json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(uint_le(4)); }
  std::uint64_t u64() { return uint_le(8); }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorCode::kTruncatedFile, "checkpoint header ends early at byte " +
                                          std::to_string(pos_));
    }
  }

  std::uint64_t uint_le(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void check_finite(const json& j, const std::string& path) {
  if (j.is_number_float()) {
    if (!std::isfinite(j.get<double>())) {
      fail(ErrorCode::kNonFiniteValue, "non-finite number at " + path);
    }
  } else if (j.is_object()) {
    for (const auto& [key, value] : j.items()) check_finite(value, path + "/" + key);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i)
      check_finite(j[i], path + "/" + std::to_string(i));
  }
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingFile, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot open " + path + " for writing");
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) fail(ErrorCode::kIoFailure, "failed writing " + path);
}

}  // namespace

json config_to_json(const ModelConfig& c) {
  return json{{"mode", to_string(c.mode)},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"d_model", c.d_model},
              {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size},
              {"max_seq_len", c.max_seq_len},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  try {
    ModelConfig c;
    c.mode = parse_model_mode(j.at("mode").get<std::string>());
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptFile, std::string("bad model config: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_checkpoint(const NamedTensorCheckpoint& ckpt) {
  const std::string config = config_to_json(ckpt.config).dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out.insert(out.end(), config.begin(), config.end());
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, m] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u64(out, m.rows());
    put_u64(out, m.cols());
    put_u64(out, offset);
    offset += static_cast<std::uint64_t>(m.size()) * 4;
  }
  for (const auto& [name, m] : ckpt.tensors) {
    for (double v : m.data()) {
      if (!std::isfinite(v)) fail(ErrorCode::kNonFiniteValue, "non-finite weight in " + name);
      const float f = static_cast<float>(v);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof(bits));
      put_u32(out, bits);
    }
  }
  return out;
}

NamedTensorCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader rd(bytes);
  if (rd.str(4) != std::string(kCheckpointMagic, 4)) {
    fail(ErrorCode::kBadMagic, "not a sinkprune checkpoint");
  }
  const std::uint32_t version = rd.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kUnsupportedVersion,
         "checkpoint version " + std::to_string(version) + " is not supported");
  }
  const std::string config_text = rd.str(rd.u32());
  json config_json;
  try {
    config_json = json::parse(config_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptFile, std::string("config JSON: ") + e.what());
  }

  struct Entry {
    std::string name;
    std::uint64_t rows, cols, offset, size;
  };
  std::vector<Entry> entries(rd.u32());
  for (Entry& e : entries) {
    e.name = rd.str(rd.u32());
    e.rows = rd.u64();
    e.cols = rd.u64();
    e.offset = rd.u64();
    if (e.cols != 0 && e.rows > std::numeric_limits<std::uint64_t>::max() / 4 / e.cols) {
      fail(ErrorCode::kCorruptFile, "tensor " + e.name + " is impossibly large");
    }
    e.size = e.rows * e.cols * 4;
  }
  const std::size_t payload_start = rd.pos();
  const std::uint64_t payload_size = bytes.size() - payload_start;

  std::vector<const Entry*> by_offset;
  for (const Entry& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(),
            [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
  std::uint64_t end = 0;
  for (const Entry* e : by_offset) {
    if (e->offset < end) {
      fail(ErrorCode::kManifestOverlap, "tensor " + e->name + " overlaps its predecessor");
    }
    if (e->offset > payload_size || e->size > payload_size - e->offset) {
      fail(ErrorCode::kTruncatedFile, "payload ends inside tensor " + e->name);
    }
    end = e->offset + e->size;
  }
  if (end != payload_size) {
    fail(ErrorCode::kCorruptFile, "payload has trailing bytes after the last tensor");
  }

  NamedTensorCheckpoint ckpt;
  ckpt.config = config_from_json(config_json);
  for (const Entry& e : entries) {
    DenseMatrix m(e.rows, e.cols);
    const std::uint8_t* p = bytes.data() + payload_start + e.offset;
    for (std::size_t i = 0; i < m.size(); ++i, p += 4) {
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                                 static_cast<std::uint32_t>(p[1]) << 8 |
                                 static_cast<std::uint32_t>(p[2]) << 16 |
                                 static_cast<std::uint32_t>(p[3]) << 24;
      float f = 0.0f;
      std::memcpy(&f, &bits, sizeof(f));
      m.data()[i] = f;
    }
    if (!ckpt.tensors.emplace(e.name, std::move(m)).second) {
      fail(ErrorCode::kCorruptFile, "duplicate tensor " + e.name);
    }
  }
  ckpt.validate();
  return ckpt;
}

void write_checkpoint(const NamedTensorCheckpoint& ckpt, const std::string& path) {
  const auto bytes = encode_checkpoint(ckpt);
  write_bytes(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

NamedTensorCheckpoint read_checkpoint(const std::string& path) {
  return decode_checkpoint(read_bytes(path));
}

std::string canonical_json(const json& j) {
  check_finite(j, "");
  return j.dump(2) + "\n";
}

void write_json(const json& j, const std::string& path) {
  write_text(canonical_json(j), path);
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptFile, path + ": " + e.what());
  }
}

json to_json(const SinkProfile& p) {
  return json{{"epsilon", p.epsilon}, {"tau", p.tau},       {"timesteps", p.timesteps},
              {"phi_bar", p.phi_bar}, {"omega", p.omega}};
}

json to_json(const VarianceReport& r) {
  return json{{"spatial_variance", r.spatial},
              {"temporal_variance", r.temporal},
              {"centroids", r.centroids},
              {"sink_sets", r.sink_sets}};
}

json to_json(const EvalReport& r) {
  return json{{"accuracy", r.accuracy},
              {"accuracy_kind", r.accuracy_kind},
              {"perplexity", r.perplexity},
              {"global_sparsity", r.global_sparsity},
              {"recon_error", r.recon_error}};
}

json to_json(const PruneReport& r) {
  json layers = json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"name", l.name},
                      {"criterion", l.criterion},
                      {"achieved_sparsity", l.achieved_sparsity},
                      {"recon_error", l.recon_error}});
  }
  json j{{"run_config", r.run_config},
         {"layers", layers},
         {"global_sparsity", r.global_sparsity},
         {"seeds", {{"model", r.seed_model}, {"calib", r.seed_calib}, {"eval", r.seed_eval}}},
         {"tool_version", r.tool_version}};
  if (!r.heads.empty()) {
    json heads = json::array();
    for (const auto& h : r.heads) {
      heads.push_back({{"layer", h.layer},
                       {"head_scores", h.head_scores},
                       {"pruned_heads", h.pruned_heads}});
    }
    j["heads"] = heads;
  }
  if (r.sink_profile) j["sink_profile"] = to_json(*r.sink_profile);
  if (r.variance) j["variance"] = to_json(*r.variance);
  if (r.eval) j["eval"] = to_json(*r.eval);
  return j;
}

void write_report(const PruneReport& report, const std::string& path) {
  write_json(to_json(report), path);
}

std::string format_number(double value) {
  if (!std::isfinite(value)) fail(ErrorCode::kNonFiniteValue, "non-finite CSV value");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string render_csv(const CsvTable& table) {
  auto field = [](const std::string& f) {
    if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
    std::string q = "\"";
    for (char c : f) {
      if (c == '"') q.push_back('"');
      q.push_back(c);
    }
    q.push_back('"');
    return q;
  };
  auto line = [&](const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) out.push_back(',');
      out += field(fields[i]);
    }
    out += "\r\n";
    return out;
  };
  std::string out = line(table.header);
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) {
      fail(ErrorCode::kShapeMismatch, "CSV row width differs from header");
    }
    out += line(row);
  }
  return out;
}

void write_csv(const CsvTable& table, const std::string& path) {
  write_text(render_csv(table), path);
}

void write_text(const std::string& text, const std::string& path) {
  write_bytes(path, text.data(), text.size());
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingFile, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace sinkprune
