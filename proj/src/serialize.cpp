#include "atome/serialize.hpp"

#include <fstream>
#include <sstream>

#include "atome/error.hpp"
#include "atome/matrix_io.hpp"

namespace atome {

using nlohmann::json;

json to_json(const MergePolicy& p) {
    json j;
    j["kind"] = to_string(p.kind);
    if (p.kind == PolicyKind::FixedRatio) {
        j["ratio"] = p.ratio;
    } else {
        j["threshold"] = p.threshold;
    }
    j["selector"] = to_string(p.selector);
    j["weighted_mean"] = p.weighted_mean;
    return j;
}

MergePolicy policy_from_json(const json& j) {
    MergePolicy p;
    p.kind = parse_policy_kind(j.at("kind").get<std::string>());
    if (p.kind == PolicyKind::FixedRatio) {
        p.ratio = j.at("ratio").get<double>();
    } else {
        p.threshold = j.at("threshold").get<double>();
    }
    p.selector = parse_selector(j.at("selector").get<std::string>());
    p.weighted_mean = j.value("weighted_mean", false);
    p.validate();
    return p;
}

json to_json(const TraceEntry& e) {
    json pairs = json::array();
    for (std::size_t i = 0; i < e.selection.size(); ++i) {
        pairs.push_back({{"i", e.selection.pairs[i]}, {"score", e.selection.scores[i]}});
    }
    json j = {{"layer", e.layer}, {"n_before", e.n_before}, {"n_after", e.n_after}, {"pairs", std::move(pairs)},
              {"policy", to_json(e.policy)}};
    if (e.budget) j["budget"] = *e.budget;
    if (!e.segment.empty()) j["segment"] = e.segment;
    return j;
}

TraceEntry trace_entry_from_json(const json& j) {
    TraceEntry e;
    e.layer = j.at("layer").get<std::size_t>();
    e.n_before = j.at("n_before").get<std::size_t>();
    e.n_after = j.at("n_after").get<std::size_t>();
    for (const auto& p : j.at("pairs")) {
        e.selection.pairs.push_back(p.at("i").get<std::size_t>());
        e.selection.scores.push_back(p.at("score").get<double>());
    }
    e.policy = policy_from_json(j.at("policy"));
    if (j.contains("budget")) e.budget = j.at("budget").get<std::size_t>();
    e.segment = j.value("segment", std::string{});
    if (e.n_after + e.selection.size() != e.n_before) throw FormatError("trace entry: n_after != n_before - |pairs|");
    return e;
}

void write_trace_jsonl(std::ostream& out, const MergeTrace& trace) {
    for (const auto& e : trace.entries) out << to_json(e).dump() << '\n';
}

MergeTrace read_trace_jsonl(std::istream& in) {
    MergeTrace t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            t.entries.push_back(trace_entry_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw FormatError("trace line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return t;
}

void write_trace_jsonl(const std::filesystem::path& path, const MergeTrace& trace) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    write_trace_jsonl(out, trace);
}

json to_json(const DecodeResult& r) {
    return {{"symbols", r.symbols}, {"steps", r.steps}, {"T", r.T}, {"U", r.U}};
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_tokens(const std::filesystem::path& path, const TokenSequence& seq) {
    seq.validate();
    write_atmx(path, seq.embeddings);
    std::ofstream out(path.string() + ".spans");
    if (!out) throw Error("cannot open for writing: " + path.string() + ".spans");
    std::ostringstream ms;
    ms.precision(17);
    ms << seq.frame_ms;
    out << "frame_ms=" << ms.str() << '\n';
    for (const auto& s : seq.spans) out << s.start_frame << ' ' << s.n_frames << '\n';
}

TokenSequence read_tokens(const std::filesystem::path& path) {
    TokenSequence seq;
    seq.embeddings = read_atmx(path);
    const std::filesystem::path spans = path.string() + ".spans";
    std::ifstream in(spans);
    if (!in) {
        // Bare embeddings: one frame per token.
        for (std::size_t i = 0; i < seq.embeddings.rows(); ++i) {
            seq.spans.push_back({static_cast<std::uint32_t>(i), 1});
        }
        return seq;
    }
    std::string line;
    if (!std::getline(in, line) || line.rfind("frame_ms=", 0) != 0) {
        throw FormatError(spans.string() + ": first line must be frame_ms=<value>");
    }
    seq.frame_ms = std::stod(line.substr(9));
    std::uint64_t start = 0, n = 0;
    while (in >> start >> n) seq.spans.push_back({static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(n)});
    if (!in.eof()) throw FormatError(spans.string() + ": malformed span line");
    try {
        seq.validate();
    } catch (const InputError& e) {
        throw FormatError(spans.string() + ": " + e.what());
    }
    return seq;
}

}  // namespace atome
