#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "atome/encoder.hpp"
#include "atome/error.hpp"
#include "atome/longform.hpp"
#include "atome/merge.hpp"
#include "atome/report.hpp"
#include "atome/serialize.hpp"
#include "atome/synth.hpp"
#include "atome/transducer.hpp"

namespace py = pybind11;
using namespace atome;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const FloatArray& a) {
    if (a.ndim() != 2) throw InputError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dims");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<float>(a.data(), a.data() + rows * cols));
}

py::array_t<float> to_array(const Matrix& m) {
    py::array_t<float> out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

Selector selector_arg(const std::string& s) { return parse_selector(s); }

py::tuple selection_tuple(const PairSelection& sel) { return py::make_tuple(sel.pairs, sel.scores); }

std::vector<std::pair<std::uint32_t, std::uint32_t>> span_list(const TokenSequence& t) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
    out.reserve(t.size());
    for (const auto& s : t.spans) out.emplace_back(s.start_frame, s.n_frames);
    return out;
}

TokenSequence make_tokens(const FloatArray& emb, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& spans,
                          double frame_ms) {
    TokenSequence t;
    t.embeddings = to_matrix(emb);
    t.frame_ms = frame_ms;
    if (spans.empty()) {
        for (std::size_t i = 0; i < t.embeddings.rows(); ++i) t.spans.push_back({static_cast<std::uint32_t>(i), 1});
    } else {
        for (const auto& [s, n] : spans) t.spans.push_back({s, n});
    }
    t.validate();
    return t;
}

py::dict encode_dict(const EncodeResult& r) {
    py::list trace;
    for (const auto& e : r.trace.entries) trace.append(py::module_::import("json").attr("loads")(to_json(e).dump()));
    py::dict d;
    d["tokens"] = to_array(r.tokens.embeddings);
    d["spans"] = span_list(r.tokens);
    d["frontend_tokens"] = r.frontend_tokens;
    d["merged_fraction"] = r.merged_fraction();
    d["mean_token_ms"] = r.mean_token_ms();
    d["similarity_profile"] = similarity_profile(r);
    d["trace"] = trace;
    return d;
}

FeatureSequence features_arg(const FloatArray& frames, double stride_ms) {
    return FeatureSequence{to_matrix(frames), stride_ms};
}

}  // namespace

PYBIND11_MODULE(_atome, m) {
    m.doc() = "Adjacent token merging in a toy Transformer-transducer";

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<PolicyError>(m, "PolicyError", PyExc_ValueError);
    py::register_exception<SelectionError>(m, "SelectionError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

    py::class_<MergePolicy>(m, "MergePolicy")
        .def_static("fixed_ratio", [](double r, const std::string& s) { return MergePolicy::fixed_ratio(r, selector_arg(s)); },
                    py::arg("ratio"), py::arg("selector") = "greedy")
        .def_static("fixed_threshold",
                    [](double t, const std::string& s) { return MergePolicy::fixed_threshold(t, selector_arg(s)); },
                    py::arg("threshold"), py::arg("selector") = "greedy")
        .def_property_readonly("kind", [](const MergePolicy& p) { return to_string(p.kind); })
        .def_readwrite("ratio", &MergePolicy::ratio)
        .def_readwrite("threshold", &MergePolicy::threshold)
        .def_property("selector", [](const MergePolicy& p) { return to_string(p.selector); },
                      [](MergePolicy& p, const std::string& s) { p.selector = selector_arg(s); })
        .def_readwrite("weighted_mean", &MergePolicy::weighted_mean)
        .def("validate", &MergePolicy::validate)
        .def("__repr__", &MergePolicy::describe);

    py::class_<EncoderConfig>(m, "EncoderConfig")
        .def(py::init<>())
        .def_static("preset", &EncoderConfig::preset)
        .def_readwrite("n_layers", &EncoderConfig::n_layers)
        .def_readwrite("merge_layers", &EncoderConfig::merge_layers)
        .def_readwrite("d_model", &EncoderConfig::d_model)
        .def_readwrite("n_heads", &EncoderConfig::n_heads)
        .def_readwrite("d_ffn", &EncoderConfig::d_ffn)
        .def_readwrite("frontend_factor", &EncoderConfig::frontend_factor)
        .def_readwrite("n_mels", &EncoderConfig::n_mels)
        .def_readwrite("policy", &EncoderConfig::policy)
        .def_readwrite("rng_seed", &EncoderConfig::rng_seed)
        .def_readwrite("positional_encoding", &EncoderConfig::positional_encoding)
        .def("update", [](EncoderConfig& c, const std::map<std::string, std::string>& kv) { apply_config_values(c, kv); },
             "Apply key=value overrides using config-file keys.")
        .def("as_dict", [](const EncoderConfig& c) { return to_key_values(c); })
        .def("validate", &EncoderConfig::validate);

    py::class_<EncoderWeights>(m, "EncoderWeights")
        .def_property_readonly("n_layers", [](const EncoderWeights& w) { return w.layers.size(); })
        .def("__eq__", [](const EncoderWeights& a, const EncoderWeights& b) { return a == b; });

    m.def("adjacent_similarities", [](const FloatArray& keys) { return adjacent_similarities(to_matrix(keys)); },
          py::arg("keys"));
    m.def("ratio_budget", &ratio_budget, py::arg("ratio"), py::arg("n_tokens"));
    m.def("select_pairs_threshold",
          [](const std::vector<double>& s, double t, const std::string& sel) {
              return selection_tuple(select_pairs_threshold(s, t, selector_arg(sel)));
          },
          py::arg("scores"), py::arg("threshold"), py::arg("selector") = "greedy",
          "Returns (pair indices, pair scores).");
    m.def("select_pairs_ratio",
          [](const std::vector<double>& s, double r, const std::string& sel) {
              return selection_tuple(select_pairs_ratio(s, r, selector_arg(sel)));
          },
          py::arg("scores"), py::arg("ratio"), py::arg("selector") = "greedy");
    m.def("select_pairs_budget",
          [](const std::vector<double>& s, std::size_t k, const std::string& sel) {
              return selection_tuple(select_pairs_budget(s, k, selector_arg(sel)));
          },
          py::arg("scores"), py::arg("k"), py::arg("selector") = "greedy");
    m.def("merge_pairs",
          [](const FloatArray& emb, const std::vector<std::size_t>& pairs,
             const std::vector<std::pair<std::uint32_t, std::uint32_t>>& spans, bool weighted) {
              const TokenSequence t = make_tokens(emb, spans, 10.0);
              PairSelection sel;
              sel.pairs = pairs;
              sel.scores.assign(pairs.size(), 0.0);
              const auto out = merge_pairs(t, sel, weighted ? MergeMode::FrameWeighted : MergeMode::Mean);
              return py::make_tuple(to_array(out.embeddings), span_list(out));
          },
          py::arg("embeddings"), py::arg("pairs"), py::arg("spans") = std::vector<std::pair<std::uint32_t, std::uint32_t>>{},
          py::arg("weighted") = false, "Returns (merged embeddings, merged spans).");

    m.def("synth_features",
          [](std::size_t n, std::size_t n_mels, double rho, std::uint64_t seed) {
              return to_array(synth_features(n, n_mels, rho, seed).frames);
          },
          py::arg("n_frames"), py::arg("n_mels") = 80, py::arg("correlation") = 0.9, py::arg("seed") = 0);

    m.def("init_weights", &init_weights, py::arg("config"), py::arg("seed"));
    m.def("encode",
          [](const FloatArray& frames, const EncoderWeights& w, const EncoderConfig& cfg, double stride_ms) {
              return encode_dict(encode(features_arg(frames, stride_ms), w, cfg));
          },
          py::arg("features"), py::arg("weights"), py::arg("config"), py::arg("stride_ms") = 10.0);

    m.def("greedy_decode",
          [](const FloatArray& tokens, std::uint64_t seed, bool all_blank, std::size_t cap, std::size_t vocab) {
              const TokenSequence t = make_tokens(tokens, {}, 10.0);
              JointConfig jc;
              jc.vocab_size = vocab;
              jc.d_enc = t.embeddings.cols();
              auto w = init_transducer(jc, seed);
              if (all_blank) rig_all_blank(w, jc);
              const auto r = greedy_decode(t, w, jc, cap);
              py::dict d;
              d["symbols"] = r.symbols;
              d["steps"] = r.steps;
              d["T"] = r.T;
              d["U"] = r.U;
              return d;
          },
          py::arg("tokens"), py::arg("seed") = 1, py::arg("all_blank") = false, py::arg("max_symbols_per_token") = 4,
          py::arg("vocab_size") = 32);

    m.def("encode_longform",
          [](const std::vector<FloatArray>& history, const FloatArray& current, const EncoderWeights& w,
             const EncoderConfig& cfg, const MergePolicy& history_policy, std::optional<MergePolicy> current_policy) {
              std::vector<FeatureSequence> h;
              for (const auto& a : history) h.push_back(features_arg(a, 10.0));
              const auto batch = concat_features(h, features_arg(current, 10.0), cfg.frontend_factor);
              const auto r = encode_longform(batch, w, cfg, BoundaryPolicy{history_policy, current_policy});
              py::dict d = encode_dict(r.full);
              d["current_tokens"] = to_array(r.current.embeddings);
              d["current_spans"] = span_list(r.current);
              d["boundary_frame"] = batch.boundary_frame;
              return d;
          },
          py::arg("history"), py::arg("current"), py::arg("weights"), py::arg("config"),
          py::arg("history_policy") = MergePolicy::fixed_ratio(0.2), py::arg("current_policy") = py::none());

    m.def("run_sweep",
          [](const std::vector<double>& grid, const EncoderConfig& cfg, const std::string& kind,
             const std::vector<std::size_t>& frames, std::uint64_t seed, double correlation) {
              SweepSpec spec;
              spec.kind = parse_policy_kind(kind);
              spec.selector = cfg.policy.selector;
              spec.grid = grid;
              spec.utterance_frames = frames;
              spec.seed = seed;
              spec.correlation = correlation;
              std::ostringstream os;
              write_report_csv(os, run_sweep(spec, cfg));
              return os.str();
          },
          py::arg("grid"), py::arg("config"), py::arg("kind") = "ratio",
          py::arg("utterance_frames") = std::vector<std::size_t>{4000}, py::arg("seed") = 0,
          py::arg("correlation") = 0.9, "Returns the report as CSV text.");
}
