// atome: synthesize features, encode with adjacent token merging, decode,
// and produce sweep / long-form / on-demand reports.

#include <cstdlib>
#include <fstream>
#include <map>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atome/encoder.hpp"
#include "atome/error.hpp"
#include "atome/longform.hpp"
#include "atome/report.hpp"
#include "atome/serialize.hpp"
#include "atome/synth.hpp"
#include "atome/transducer.hpp"

namespace {

using namespace atome;

// Options shared by every subcommand: config file, preset, seed and one
// flag per config key (--ratio, --merge_layers, ...), applied in that order.
struct CommonOptions {
    std::string config_file;
    std::string preset = "toy";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    std::map<std::string, std::string> key_flags;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key=value encoder config file")->check(CLI::ExistingFile);
        cmd->add_option("--preset", preset, "toy | toy18 | full")->capture_default_str();
        cmd->add_option("--seed", seed, "seed for weights and synthetic data");
        cmd->add_option("--set", sets, "extra key=value config override (repeatable)");
        for (const auto& key : encoder_config_keys()) {
            cmd->add_option("--" + key, key_flags[key], "config key " + key);
        }
    }

    EncoderConfig resolve() const {
        EncoderConfig cfg = EncoderConfig::preset(preset);
        if (!config_file.empty()) cfg = load_encoder_config(config_file, cfg);
        KeyValues kv;
        for (const auto& [k, v] : key_flags) {
            if (!v.empty()) kv[k] = v;
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
            kv[s.substr(0, eq)] = s.substr(eq + 1);
        }
        if (seed) kv["rng_seed"] = std::to_string(*seed);
        if (!kv.empty()) apply_config_values(cfg, kv);
        cfg.validate();
        return cfg;
    }

    std::uint64_t data_seed(const EncoderConfig& cfg) const { return seed.value_or(cfg.rng_seed); }
};

JointConfig joint_for(const EncoderConfig& cfg) {
    JointConfig jc;
    jc.d_enc = cfg.d_model;
    return jc;
}

void write_csv_file(const std::string& path, const Report& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    write_report_csv(out, report);
}

// Comma-separated numbers given on the command line; empty items are usage errors.
std::vector<double> parse_grid(const std::vector<std::string>& items, const std::string& flag) {
    std::vector<double> out;
    for (const auto& item : items) {
        if (item.empty()) throw UsageError(flag + ": empty value in list");
        try {
            out.push_back(parse_double(item));
        } catch (const FormatError&) {
            throw UsageError(flag + ": not a number: '" + item + "'");
        }
    }
    if (out.empty()) throw UsageError(flag + ": needs at least one value");
    return out;
}

std::vector<FeatureSequence> load_manifest(const std::filesystem::path& manifest, std::size_t& boundary) {
    const auto j = read_json(manifest);
    if (!j.contains("utterances") || !j["utterances"].is_array() || j["utterances"].empty()) {
        throw FormatError(manifest.string() + ": 'utterances' must be a non-empty array of paths");
    }
    const auto base = manifest.parent_path();
    std::vector<FeatureSequence> utts;
    for (const auto& p : j["utterances"]) {
        std::filesystem::path path = p.get<std::string>();
        if (path.is_relative()) path = base / path;
        utts.push_back(read_features(path));
    }
    boundary = j.value("boundary", utts.size() - 1);
    if (boundary >= utts.size()) {
        throw FormatError(manifest.string() + ": 'boundary' must index one of the utterances");
    }
    return utts;
}

MergePolicy segment_policy(std::optional<double> ratio, std::optional<double> threshold, Selector sel,
                           const char* which) {
    if (ratio && threshold) throw UsageError(std::string("give either --") + which + "-ratio or --" + which + "-threshold");
    if (threshold) return MergePolicy::fixed_threshold(*threshold, sel);
    return MergePolicy::fixed_ratio(ratio.value_or(0.0), sel);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adjacent token merging for transducer encoders"};
    app.require_subcommand(1);

    // synth
    CommonOptions synth_common;
    std::size_t synth_frames = 0;
    double synth_corr = 0.9;
    double synth_stride = 10.0;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "write AR(1) synthetic features (ATMX + .meta)");
    synth_common.attach(synth);
    synth->add_option("--frames", synth_frames, "number of frames")->required()->check(CLI::PositiveNumber);
    synth->add_option("--correlation", synth_corr, "AR(1) coefficient in [0, 1)")->capture_default_str();
    synth->add_option("--stride-ms", synth_stride, "frame stride")->capture_default_str();
    synth->add_option("--out", synth_out, "output .atmx")->required();

    // encode
    CommonOptions enc_common;
    std::string enc_in, enc_out, enc_trace;
    auto* enc = app.add_subcommand("encode", "encode a feature file, writing tokens and the merge trace");
    enc_common.attach(enc);
    enc->add_option("--in", enc_in, "feature .atmx")->required()->check(CLI::ExistingFile);
    enc->add_option("--out", enc_out, "token .atmx (spans in <out>.spans)")->required();
    enc->add_option("--trace", enc_trace, "merge trace JSON lines");

    // decode
    CommonOptions dec_common;
    std::string dec_in, dec_out;
    bool dec_blank = false;
    std::size_t dec_cap = 4;
    auto* dec = app.add_subcommand("decode", "greedy transducer decode of an encoder token file");
    dec_common.attach(dec);
    dec->add_option("--in", dec_in, "token .atmx")->required()->check(CLI::ExistingFile);
    dec->add_option("--out", dec_out, "decode result JSON")->required();
    dec->add_flag("--all-blank", dec_blank, "rig the joint network to always emit blank");
    dec->add_option("--max-symbols", dec_cap, "emission cap per token")->capture_default_str();

    // sweep
    CommonOptions sw_common;
    std::string sw_out;
    std::vector<std::string> sw_grid;
    std::vector<std::size_t> sw_frames = {4000};
    std::size_t sw_reps = 1;
    double sw_corr = 0.9;
    bool sw_timing = false;
    // Policy kind and selector come from the --policy / --selector config keys.
    auto* sw = app.add_subcommand("sweep", "merge ratio / threshold sweep report (CSV)");
    sw_common.attach(sw);
    sw->add_option("--grid", sw_grid, "ratios or thresholds")->required()->delimiter(',');
    sw->add_option("--frames", sw_frames, "utterance lengths in frames")->delimiter(',')->capture_default_str();
    sw->add_option("--reps", sw_reps, "timing repetitions")->capture_default_str();
    sw->add_option("--correlation", sw_corr, "AR(1) coefficient of the synthetic features")->capture_default_str();
    sw->add_flag("--timing", sw_timing, "add median encoder wall-clock (output no longer reproducible)");
    sw->add_option("--out", sw_out, "report CSV")->required();

    // longform
    CommonOptions lf_common;
    std::string lf_manifest, lf_out, lf_trace;
    std::optional<double> lf_hist_ratio, lf_hist_thr, lf_cur_ratio, lf_cur_thr;
    bool lf_latency = false;
    std::vector<std::size_t> lf_histories = {0, 1, 2};
    std::size_t lf_frames = 1600, lf_reps = 3;
    double lf_corr = 0.9;
    auto* lf = app.add_subcommand("longform", "long-form encoding with history utterances");
    lf_common.attach(lf);
    lf->add_option("--manifest", lf_manifest, "JSON {utterances: [paths], boundary: index}")->check(CLI::ExistingFile);
    lf->add_option("--out", lf_out, "current-slice tokens .atmx, or latency CSV with --latency")->required();
    lf->add_option("--trace", lf_trace, "merge trace JSON lines");
    lf->add_option("--history-ratio", lf_hist_ratio, "per-layer merge ratio for history tokens (default 0.2)");
    lf->add_option("--history-threshold", lf_hist_thr, "merge threshold for history tokens");
    lf->add_option("--current-ratio", lf_cur_ratio, "per-layer merge ratio for current tokens");
    lf->add_option("--current-threshold", lf_cur_thr, "merge threshold for current tokens");
    lf->add_flag("--latency", lf_latency, "measure encoder / post-encoder time per history count");
    lf->add_option("--histories", lf_histories, "history counts for --latency")->delimiter(',')->capture_default_str();
    lf->add_option("--frames", lf_frames, "frames per synthetic utterance for --latency")->capture_default_str();
    lf->add_option("--reps", lf_reps, "repetitions for --latency")->capture_default_str();
    lf->add_option("--correlation", lf_corr, "AR(1) coefficient for --latency")->capture_default_str();

    // ondemand
    CommonOptions od_common;
    std::vector<std::string> od_thresholds = {"0.8", "0.85", "0.9", "0.95"};
    std::vector<std::size_t> od_frames = {4000};
    double od_corr = 0.9;
    std::string od_out;
    auto* od = app.add_subcommand("ondemand", "merged fraction of one fixed model across thresholds (CSV)");
    od_common.attach(od);
    od->add_option("--thresholds", od_thresholds, "evaluation thresholds")->delimiter(',')->capture_default_str();
    od->add_option("--frames", od_frames, "utterance lengths in frames")->delimiter(',')->capture_default_str();
    od->add_option("--correlation", od_corr, "AR(1) coefficient")->capture_default_str();
    od->add_option("--out", od_out, "report CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*synth) {
            const auto cfg = synth_common.resolve();
            const auto f = synth_features(synth_frames, cfg.n_mels, synth_corr, synth_common.data_seed(cfg), synth_stride);
            write_features(synth_out, f);
        } else if (*enc) {
            const auto cfg = enc_common.resolve();
            const auto features = read_features(enc_in);
            const auto weights = init_weights(cfg, cfg.rng_seed);
            const auto r = encode(features, weights, cfg);
            write_tokens(enc_out, r.tokens);
            if (!enc_trace.empty()) write_trace_jsonl(enc_trace, r.trace);
        } else if (*dec) {
            const auto cfg = dec_common.resolve();
            const auto tokens = read_tokens(dec_in);
            const JointConfig jc = joint_for(cfg);
            auto tw = init_transducer(jc, cfg.rng_seed + 1);
            if (dec_blank) rig_all_blank(tw, jc);
            write_json(dec_out, to_json(greedy_decode(tokens, tw, jc, dec_cap)));
        } else if (*sw) {
            const auto cfg = sw_common.resolve();
            SweepSpec spec;
            spec.kind = cfg.policy.kind;
            spec.selector = cfg.policy.selector;
            spec.grid = parse_grid(sw_grid, "--grid");
            spec.utterance_frames = sw_frames;
            spec.repetitions = sw_reps;
            spec.correlation = sw_corr;
            spec.timing = sw_timing;
            spec.seed = sw_common.data_seed(cfg);
            write_csv_file(sw_out, run_sweep(spec, cfg));
        } else if (*lf) {
            const auto cfg = lf_common.resolve();
            const Selector sel = cfg.policy.selector;
            BoundaryPolicy bp;
            bp.history = segment_policy(lf_hist_ratio ? lf_hist_ratio : (lf_hist_thr ? std::nullopt : std::optional(0.2)),
                                        lf_hist_thr, sel, "history");
            if (lf_cur_ratio || lf_cur_thr) bp.current = segment_policy(lf_cur_ratio, lf_cur_thr, sel, "current");
            const auto weights = init_weights(cfg, cfg.rng_seed);
            if (lf_latency) {
                LatencySpec spec;
                spec.history_counts = lf_histories;
                spec.utterance_frames = lf_frames;
                spec.repetitions = lf_reps;
                spec.correlation = lf_corr;
                spec.seed = lf_common.data_seed(cfg);
                std::ofstream out(lf_out, std::ios::binary);
                if (!out) throw Error("cannot open for writing: " + lf_out);
                out << "n_history,frontend_tokens,encoder_tokens,current_tokens,encoder_ms,post_encoder_ms,"
                       "decode_steps,repetitions\r\n";
                for (const auto& r : latency_split(spec, weights, cfg, bp)) {
                    out << r.n_history << ',' << r.frontend_tokens << ',' << r.encoder_tokens << ','
                        << r.current_tokens << ',' << format_double(r.encoder_ms) << ','
                        << format_double(r.post_encoder_ms) << ',' << r.decode_steps << ',' << r.repetitions << "\r\n";
                }
            } else {
                if (lf_manifest.empty()) throw UsageError("longform needs --manifest (or --latency)");
                std::size_t boundary = 0;
                auto utts = load_manifest(lf_manifest, boundary);
                std::vector<FeatureSequence> history(utts.begin(), utts.begin() + static_cast<std::ptrdiff_t>(boundary));
                FeatureSequence current = utts[boundary];
                for (std::size_t i = boundary + 1; i < utts.size(); ++i) {
                    std::vector<FeatureSequence> one{current};
                    current = concat_features(one, utts[i]).features;
                }
                const auto batch = concat_features(history, current, cfg.frontend_factor);
                const auto r = encode_longform(batch, weights, cfg, bp);
                write_tokens(lf_out, r.current);
                if (!lf_trace.empty()) write_trace_jsonl(lf_trace, r.full.trace);
            }
        } else if (*od) {
            const auto cfg = od_common.resolve();
            SweepSpec spec;
            spec.selector = cfg.policy.selector;
            spec.utterance_frames = od_frames;
            spec.correlation = od_corr;
            spec.seed = od_common.data_seed(cfg);
            write_csv_file(od_out, run_ondemand(parse_grid(od_thresholds, "--thresholds"), spec, cfg));
        }
    } catch (const UsageError& e) {
        std::cerr << "atome: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        std::cerr << "atome: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "atome: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "atome: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
