#include "atome/report.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "atome/error.hpp"
#include "atome/longform.hpp"
#include "atome/synth.hpp"
#include "atome/transducer.hpp"

namespace atome {

void SweepSpec::validate() const {
    if (grid.empty()) throw UsageError("sweep grid must not be empty");
    if (utterance_frames.empty()) throw UsageError("sweep needs at least one utterance length");
    if (repetitions == 0) throw UsageError("sweep repetitions must be >= 1");
    if (timing && repetitions < 3) throw UsageError("timed sweeps need repetitions >= 3");
    for (double v : grid) {
        MergePolicy p;
        p.kind = kind;
        (kind == PolicyKind::FixedRatio ? p.ratio : p.threshold) = v;
        p.validate();
    }
}

const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols = {
        "config",          "policy",          "selector",        "value",
        "utterances",      "frontend_tokens", "output_tokens",   "merged_pct",
        "mean_token_ms",   "len_40ms",        "len_80ms",        "len_120ms",
        "len_160ms",       "len_200ms_plus",  "layer_similarity", "layer_merge_ratio",
        "layer_merge_threshold", "repetitions", "encoder_ms",    "decode_steps",
        "seed"};
    return cols;
}

std::string format_double(double v) {
    if (std::isnan(v)) return {};
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("not a number: '" + s + "'");
    return v;
}

namespace {

std::uint64_t parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("not an integer: '" + s + "'");
    return v;
}

std::string join(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ';';
        out += std::isnan(xs[i]) ? std::string("nan") : format_double(xs[i]);
    }
    return out;
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(';', start);
        out.push_back(parse_double(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

struct Accumulator {
    std::size_t utterances = 0;
    std::size_t frontend_tokens = 0;
    std::size_t output_tokens = 0;
    double covered_ms = 0.0;
    std::array<std::size_t, kLengthBuckets> hist{};
    std::vector<double> sim_sum;
    std::vector<std::size_t> sim_count;
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> merged;  // layer -> (pairs, tokens in)
    std::map<std::size_t, std::pair<double, std::size_t>> min_score;    // layer -> (sum of minima, count)
    std::size_t decode_steps = 0;
};

void accumulate(Accumulator& acc, const EncodeResult& r, const EncoderConfig& cfg) {
    ++acc.utterances;
    acc.frontend_tokens += r.frontend_tokens;
    acc.output_tokens += r.tokens.size();
    acc.covered_ms += static_cast<double>(r.tokens.total_frames()) * r.tokens.frame_ms;
    for (const auto& s : r.tokens.spans) {
        const std::size_t units = (s.n_frames + cfg.frontend_factor / 2) / cfg.frontend_factor;
        acc.hist[std::clamp<std::size_t>(units, 1, kLengthBuckets) - 1] += 1;
    }
    if (acc.sim_sum.size() < r.layers.size()) {
        acc.sim_sum.resize(r.layers.size(), 0.0);
        acc.sim_count.resize(r.layers.size(), 0);
    }
    for (std::size_t l = 0; l < r.layers.size(); ++l) {
        for (double s : r.layers[l].similarities) acc.sim_sum[l] += s;
        acc.sim_count[l] += r.layers[l].similarities.size();
    }
    for (const auto& e : r.trace.entries) {
        auto& m = acc.merged[e.layer];
        m.first += e.selection.size();
        m.second += e.n_before;
        if (!e.selection.empty()) {
            auto& ms = acc.min_score[e.layer];
            ms.first += *std::min_element(e.selection.scores.begin(), e.selection.scores.end());
            ms.second += 1;
        }
    }
}

}  // namespace

Report run_sweep(const SweepSpec& spec, const EncoderConfig& cfg) {
    spec.validate();
    cfg.validate();
    using Clock = std::chrono::steady_clock;

    const EncoderWeights weights = init_weights(cfg, cfg.rng_seed);
    JointConfig jc;
    jc.d_enc = cfg.d_model;
    const TransducerWeights tw = init_transducer(jc, cfg.rng_seed + 1);

    std::vector<FeatureSequence> utts;
    for (std::size_t i = 0; i < spec.utterance_frames.size(); ++i) {
        utts.push_back(synth_features(spec.utterance_frames[i], cfg.n_mels, spec.correlation, spec.seed + 7919 * i));
    }
    const std::string label = spec.label.empty() ? to_string(spec.kind) : spec.label;

    Report report;
    for (double value : spec.grid) {
        EncoderConfig run_cfg = cfg;
        run_cfg.policy.kind = spec.kind;
        run_cfg.policy.selector = spec.selector;
        (spec.kind == PolicyKind::FixedRatio ? run_cfg.policy.ratio : run_cfg.policy.threshold) = value;

        Accumulator acc;
        for (const auto& f : utts) {
            const EncodeResult r = encode(f, weights, run_cfg);
            accumulate(acc, r, cfg);
            acc.decode_steps += greedy_decode(r.tokens, tw, jc).steps;
        }

        ReportRow row;
        row.config = label + "=" + format_double(value);
        row.kind = spec.kind;
        row.selector = spec.selector;
        row.value = value;
        row.utterances = acc.utterances;
        row.frontend_tokens = acc.frontend_tokens;
        row.output_tokens = acc.output_tokens;
        row.merged_pct = 100.0 * (1.0 - static_cast<double>(acc.output_tokens) / static_cast<double>(acc.frontend_tokens));
        row.mean_token_ms = acc.covered_ms / static_cast<double>(acc.output_tokens);
        row.length_hist = acc.hist;
        for (std::size_t l = 0; l < acc.sim_sum.size(); ++l) {
            row.layer_similarity.push_back(acc.sim_count[l] ? acc.sim_sum[l] / static_cast<double>(acc.sim_count[l])
                                                            : std::numeric_limits<double>::quiet_NaN());
        }
        std::vector<std::size_t> layers = cfg.merge_layers;
        std::sort(layers.begin(), layers.end());
        for (std::size_t l : layers) {
            const auto m = acc.merged[l];
            row.layer_merge_ratio.push_back(m.second ? static_cast<double>(m.first) / static_cast<double>(m.second) : 0.0);
            const auto it = acc.min_score.find(l);
            row.layer_merge_threshold.push_back(it == acc.min_score.end()
                                                    ? std::numeric_limits<double>::quiet_NaN()
                                                    : it->second.first / static_cast<double>(it->second.second));
        }
        row.repetitions = spec.repetitions;
        row.decode_steps = acc.decode_steps;
        row.seed = spec.seed;
        if (spec.timing) {
            std::vector<double> times;
            for (std::size_t rep = 0; rep < spec.repetitions; ++rep) {
                const auto t0 = Clock::now();
                for (const auto& f : utts) encode(f, weights, run_cfg);
                times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
            }
            row.encoder_ms = median(times);
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

Report run_ondemand(std::vector<double> thresholds, SweepSpec spec, const EncoderConfig& cfg) {
    spec.kind = PolicyKind::FixedThreshold;
    spec.grid = std::move(thresholds);
    if (spec.label.empty()) spec.label = "ondemand";
    return run_sweep(spec, cfg);
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;
    char c = 0;
    while (in.get(c)) {
        any = true;
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field += '"';
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && in.peek() == '\n') in.get(c);
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
            any = false;
        } else {
            field += c;
        }
    }
    if (quoted) throw FormatError("CSV: unterminated quoted field");
    if (any) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_report_csv(std::ostream& out, const Report& report) {
    const auto& cols = report_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << "\r\n";
    for (const auto& r : report.rows) {
        std::vector<std::string> f = {r.config,
                                      to_string(r.kind),
                                      to_string(r.selector),
                                      format_double(r.value),
                                      std::to_string(r.utterances),
                                      std::to_string(r.frontend_tokens),
                                      std::to_string(r.output_tokens),
                                      format_double(r.merged_pct),
                                      format_double(r.mean_token_ms)};
        for (std::size_t b : r.length_hist) f.push_back(std::to_string(b));
        f.push_back(join(r.layer_similarity));
        f.push_back(join(r.layer_merge_ratio));
        f.push_back(join(r.layer_merge_threshold));
        f.push_back(std::to_string(r.repetitions));
        f.push_back(r.encoder_ms ? format_double(*r.encoder_ms) : std::string{});
        f.push_back(std::to_string(r.decode_steps));
        f.push_back(std::to_string(r.seed));
        for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << csv_escape(f[i]);
        out << "\r\n";
    }
}

Report read_report_csv(std::istream& in) {
    const auto rows = parse_csv(in);
    if (rows.empty() || rows.front() != report_columns()) throw FormatError("report CSV: header does not match");
    Report report;
    for (std::size_t n = 1; n < rows.size(); ++n) {
        const auto& f = rows[n];
        if (f.size() != report_columns().size()) {
            throw FormatError("report CSV row " + std::to_string(n) + ": expected " +
                              std::to_string(report_columns().size()) + " fields, got " + std::to_string(f.size()));
        }
        ReportRow r;
        std::size_t i = 0;
        r.config = f[i++];
        r.kind = parse_policy_kind(f[i++]);
        r.selector = parse_selector(f[i++]);
        r.value = parse_double(f[i++]);
        r.utterances = parse_u64(f[i++]);
        r.frontend_tokens = parse_u64(f[i++]);
        r.output_tokens = parse_u64(f[i++]);
        r.merged_pct = parse_double(f[i++]);
        r.mean_token_ms = parse_double(f[i++]);
        for (auto& b : r.length_hist) b = parse_u64(f[i++]);
        r.layer_similarity = split_doubles(f[i++]);
        r.layer_merge_ratio = split_doubles(f[i++]);
        r.layer_merge_threshold = split_doubles(f[i++]);
        r.repetitions = parse_u64(f[i++]);
        if (!f[i].empty()) r.encoder_ms = parse_double(f[i]);
        ++i;
        r.decode_steps = parse_u64(f[i++]);
        r.seed = parse_u64(f[i++]);
        report.rows.push_back(std::move(r));
    }
    return report;
}

}  // namespace atome
