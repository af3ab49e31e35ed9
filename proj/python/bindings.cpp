// Copyright 2026 The sinkprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "sinkprune/calib.hpp"
#include "sinkprune/cli.hpp"
#include "sinkprune/error.hpp"
#include "sinkprune/eval.hpp"
#include "sinkprune/io.hpp"
#include "sinkprune/model.hpp"
#include "sinkprune/prune.hpp"
#include "sinkprune/sinkstats.hpp"

namespace py = pybind11;
using namespace sinkprune;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

DenseMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  DenseMatrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

Array from_matrix(const DenseMatrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

Array from_vector(const std::vector<double>& v) {
  Array a(v.size());
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

py::array_t<bool> from_mask(const PruneMask& mask) {
  py::array_t<bool> a({mask.rows, mask.cols});
  bool* out = a.mutable_data();
  for (std::size_t i = 0; i < mask.keep.size(); ++i) out[i] = mask.keep[i];
  return a;
}

Array attention_array(const AttentionSnapshot& snap) {
  const std::size_t s = snap.seq_len();
  Array a({snap.n_layers, snap.n_heads, s, s});
  double* out = a.mutable_data();
  for (const DenseMatrix& m : snap.maps) out = std::copy(m.data().begin(), m.data().end(), out);
  return a;
}

LayerActivationStats stats_from_activations(const Array& x) {
  const DenseMatrix m = to_matrix(x);
  LayerActivationStats s(m.cols());
  s.accumulate(m);
  return s;
}

py::dict variance_dict(const VarianceReport& v) {
  py::dict d;
  d["spatial"] = v.spatial;
  d["temporal"] = v.temporal;
  d["centroids"] = v.centroids;
  d["sink_sets"] = v.sink_sets;
  return d;
}

struct PruneOutcome {
  NamedTensorCheckpoint checkpoint;
  std::string report_json;
};

PruneOutcome prune_checkpoint(const NamedTensorCheckpoint& ckpt, const std::string& corpus_path,
                              const std::string& criterion, bool sink_aware, double sparsity,
                              const std::string& pattern, std::size_t calib_n,
                              std::size_t calib_len, std::size_t tsteps,
                              std::size_t total_steps, std::uint64_t seed_calib,
                              const std::string& tokenizer) {
  PruneRequest request;
  request.criterion = parse_criterion(criterion);
  request.sink_aware = sink_aware;
  request.sparsity = sparsity;
  request.pattern = parse_pattern(pattern);
  request.validate();

  const Corpus corpus = load_corpus_file(corpus_path, parse_tokenizer_kind(tokenizer),
                                         ckpt.config.vocab_size);
  const CalibrationSet calib = sample_calibration(corpus, calib_n, calib_len, seed_calib);
  const std::vector<std::size_t> timesteps =
      ckpt.config.is_diffusion() ? uniform_timesteps(total_steps, tsteps)
                                 : std::vector<std::size_t>{1};
  const ActivationStatsMap raw = collect_activations(ckpt, calib, timesteps, total_steps);

  PruneReport report;
  ActivationStatsMap masked;
  const ActivationStatsMap* pruning_stats = &raw;
  if (sink_aware && request.criterion != Criterion::kMagnitude) {
    const std::size_t L = ckpt.config.n_layers, H = ckpt.config.n_heads;
    const auto traces = collect_attention(ckpt, calib, timesteps, total_steps);
    report.sink_profile = build_sink_profile(traces, timesteps, default_epsilon(L, H, calib_len),
                                             default_tau(L, H, calib_len));
    masked = collect_activations(ckpt, calib, timesteps, total_steps, &*report.sink_profile);
    pruning_stats = &masked;
  }
  ModelPruneResult result = prune_model(ckpt, *pruning_stats, raw, request);

  report.run_config = nlohmann::json{{"criterion", criterion},
                                     {"sink_aware", report.sink_profile.has_value()},
                                     {"sparsity", sparsity},
                                     {"pattern", to_string(request.pattern)},
                                     {"calib_n", calib_n},
                                     {"calib_len", calib_len},
                                     {"timesteps", timesteps}};
  for (const auto& layer : result.layers) {
    report.layers.push_back({layer.name, to_string(layer.criterion), layer.achieved_sparsity,
                             layer.recon_error});
  }
  report.heads = result.heads;
  report.seed_model = ckpt.config.seed;
  report.seed_calib = seed_calib;
  report.global_sparsity = global_sparsity(result.checkpoint);
  return {std::move(result.checkpoint), canonical_json(to_json(report))};
}

}  // namespace

PYBIND11_MODULE(_sinkprune, m) {
  m.doc() = "Sink-aware pruning for toy transformer language models";

  static py::exception<Error> error_type(m, "SinkpruneError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string text = std::string(error_code_name(e.code())) + ": " + e.what();
      py::set_error(error_type, text.c_str());
    }
  });

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_property(
          "mode", [](const ModelConfig& c) { return to_string(c.mode); },
          [](ModelConfig& c, const std::string& s) { c.mode = parse_model_mode(s); })
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_property_readonly("mask_id", &ModelConfig::mask_id)
      .def("validate", &ModelConfig::validate);

  py::class_<NamedTensorCheckpoint>(m, "Checkpoint")
      .def_readonly("config", &NamedTensorCheckpoint::config)
      .def("names",
           [](const NamedTensorCheckpoint& c) {
             std::vector<std::string> out;
             for (const auto& [name, _] : c.tensors) out.push_back(name);
             return out;
           })
      .def("prunable_names", &NamedTensorCheckpoint::prunable_names)
      .def("tensor", [](const NamedTensorCheckpoint& c,
                        const std::string& name) { return from_matrix(c.at(name)); })
      .def("set_tensor",
           [](NamedTensorCheckpoint& c, const std::string& name, const Array& value) {
             DenseMatrix next = to_matrix(value);
             const DenseMatrix& cur = c.at(name);
             if (next.rows() != cur.rows() || next.cols() != cur.cols()) {
               fail(ErrorCode::kShapeMismatch, "tensor " + name + " changes shape");
             }
             c.at(name) = std::move(next);
           })
      .def("save", [](const NamedTensorCheckpoint& c,
                      const std::string& path) { write_checkpoint(c, path); })
      .def("to_bytes",
           [](const NamedTensorCheckpoint& c) {
             const auto bytes = encode_checkpoint(c);
             return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
           })
      .def("__eq__", [](const NamedTensorCheckpoint& a,
                        const NamedTensorCheckpoint& b) { return a == b; });

  m.def("init_random_model", &init_random_model, py::arg("config"));
  m.def("load_checkpoint", &read_checkpoint, py::arg("path"));
  m.def(
      "checkpoint_from_bytes",
      [](const py::bytes& data) {
        const std::string s = data;
        return decode_checkpoint(std::vector<std::uint8_t>(s.begin(), s.end()));
      },
      py::arg("data"));

  m.def(
      "forward",
      [](const NamedTensorCheckpoint& ckpt, const std::vector<TokenId>& tokens,
         bool attention) {
        const ForwardResult r = forward(ckpt, tokens, {attention, false});
        py::dict d;
        d["logits"] = from_matrix(r.logits);
        if (r.attention) d["attention"] = attention_array(*r.attention);
        return d;
      },
      py::arg("checkpoint"), py::arg("tokens"), py::arg("attention") = false);

  m.def("incoming_mass", [](const Array& a) { return from_vector(incoming_mass(to_matrix(a))); },
        py::arg("attention"));
  m.def("cumulative_attention",
        [](const Array& a) { return from_vector(cumulative_attention(to_matrix(a))); },
        py::arg("attention"));
  m.def("detect_sinks",
        [](const Array& mass, double eps) { return detect_sinks(to_vector(mass), eps); },
        py::arg("mass"), py::arg("epsilon"));
  m.def("soft_sink_score",
        [](const Array& mass, double eps, double tau) {
          return from_vector(soft_sink_score(to_vector(mass), eps, tau));
        },
        py::arg("mass"), py::arg("epsilon"), py::arg("tau"));
  m.def(
      "mass_variance",
      [](const std::vector<std::vector<double>>& steps, double epsilon) {
        MassSeries series;
        series.steps = steps;
        return variance_dict(temporal_variance(series, epsilon));
      },
      py::arg("steps"), py::arg("epsilon"));
  m.def(
      "synthetic_variance",
      [](const std::string& kind, std::size_t seq_len, std::size_t n_steps,
         std::size_t n_layers, std::size_t n_heads, double sink_share, double jitter,
         std::uint64_t seed, double epsilon) {
        SyntheticTraceSpec spec;
        spec.kind = parse_synthetic_trace_kind(kind);
        spec.seq_len = seq_len;
        spec.n_steps = n_steps;
        spec.n_layers = n_layers;
        spec.n_heads = n_heads;
        spec.sink_share = sink_share;
        spec.jitter = jitter;
        spec.seed = seed;
        const MassSeries series =
            mass_series(synthetic_trace(spec), MassAggregation::kSumOverQueries);
        return variance_dict(temporal_variance(series, epsilon));
      },
      py::arg("kind"), py::arg("seq_len") = 32, py::arg("n_steps") = 16,
      py::arg("n_layers") = 2, py::arg("n_heads") = 2, py::arg("sink_share") = 0.6,
      py::arg("jitter") = 0.0, py::arg("seed") = 0, py::arg("epsilon") = 1.0);

  m.def(
      "wanda_scores",
      [](const Array& w, const Array& x) {
        return from_matrix(wanda_scores(to_matrix(w), stats_from_activations(x)));
      },
      py::arg("weight"), py::arg("activations"));
  m.def(
      "select_mask",
      [](const Array& scores, double sparsity, const std::string& pattern) {
        return from_mask(select_mask(to_matrix(scores), sparsity, parse_pattern(pattern)));
      },
      py::arg("scores"), py::arg("sparsity"), py::arg("pattern") = "rowwise");
  m.def(
      "sparsegpt_prune",
      [](const Array& w, const Array& x, double sparsity, const std::string& pattern,
         double dampening_rel, std::size_t blocksize) {
        PruneRequest r;
        r.criterion = Criterion::kSparseGpt;
        r.sparsity = sparsity;
        r.pattern = parse_pattern(pattern);
        r.dampening_rel = dampening_rel;
        r.blocksize = blocksize;
        const auto res = sparsegpt_prune(to_matrix(w), stats_from_activations(x), r);
        return py::make_tuple(from_mask(res.mask), from_matrix(res.weights));
      },
      py::arg("weight"), py::arg("activations"), py::arg("sparsity"),
      py::arg("pattern") = "rowwise", py::arg("dampening_rel") = 0.01,
      py::arg("blocksize") = 32);

  m.def(
      "prune_checkpoint",
      [](const NamedTensorCheckpoint& ckpt, const std::string& corpus,
         const std::string& criterion, bool sink_aware, double sparsity,
         const std::string& pattern, std::size_t calib_n, std::size_t calib_len,
         std::size_t tsteps, std::size_t total_steps, std::uint64_t seed_calib,
         const std::string& tokenizer) {
        PruneOutcome out = prune_checkpoint(ckpt, corpus, criterion, sink_aware, sparsity,
                                            pattern, calib_n, calib_len, tsteps, total_steps,
                                            seed_calib, tokenizer);
        return py::make_tuple(std::move(out.checkpoint), out.report_json);
      },
      py::arg("checkpoint"), py::arg("corpus"), py::arg("criterion") = "wanda",
      py::arg("sink_aware") = false, py::arg("sparsity") = 0.5,
      py::arg("pattern") = "rowwise", py::arg("calib_n") = 32, py::arg("calib_len") = 128,
      py::arg("tsteps") = 8, py::arg("total_steps") = 32, py::arg("seed_calib") = 0,
      py::arg("tokenizer") = "whitespace-hash");

  m.def("global_sparsity", &global_sparsity, py::arg("checkpoint"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"sinkprune"};
        for (const auto& a : args) argv.push_back(a.c_str());
        return cli::main_entry(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));

  m.attr("__version__") = kToolVersion;
}
