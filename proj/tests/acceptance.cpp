// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atome/encoder.hpp"
#include "atome/longform.hpp"
#include "atome/merge.hpp"
#include "atome/report.hpp"
#include "atome/synth.hpp"
#include "atome/transducer.hpp"
#include "oracles.hpp"

using namespace atome;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(double v, int prec = 2) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << v;
    return os.str();
}

std::string sci(double v) {
    std::ostringstream os;
    os.setf(std::ios::scientific);
    os.precision(2);
    os << v;
    return os.str();
}

// ---- criteria 1 and 2 -------------------------------------------------------

struct RatioRun {
    double ratio;
    double lo_pct, hi_pct;  // accepted merged-fraction band
    double ms_target;       // token-length reference
};

const RatioRun kRatioRuns[] = {{0.10, 46.0, 48.0, 74.0}, {0.15, 61.0, 63.0, 103.0}, {0.20, 73.0, 74.0, 148.0}};
constexpr double kMsTolerance = 6.0;
constexpr double kIdentityTolerance = 1.0;

struct RatioStats {
    double merged_pct = 0;
    double mean_ms = 0;
    std::size_t frontend = 0;
};

std::vector<RatioStats> ratio_stats() {
    EncoderConfig cfg = EncoderConfig::toy18();
    const auto w = init_weights(cfg, 0);
    std::vector<FeatureSequence> utts;
    for (std::size_t i = 0; i < 3; ++i) utts.push_back(synth_features(4000 + 400 * i, cfg.n_mels, 0.9, 100 + i));
    std::vector<RatioStats> out;
    for (const auto& run : kRatioRuns) {
        cfg.policy = MergePolicy::fixed_ratio(run.ratio);
        std::size_t front = 0, tokens = 0, frames = 0;
        for (const auto& f : utts) {
            const auto r = encode(f, w, cfg);
            front += r.frontend_tokens;
            tokens += r.tokens.size();
            frames += r.tokens.total_frames();
        }
        RatioStats s;
        s.frontend = front;
        s.merged_pct = 100.0 * (1.0 - static_cast<double>(tokens) / static_cast<double>(front));
        s.mean_ms = static_cast<double>(frames) * 10.0 / static_cast<double>(tokens);
        out.push_back(s);
    }
    return out;
}

Outcome criterion1(const std::vector<RatioStats>& stats) {
    Outcome o;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const auto& run = kRatioRuns[i];
        const bool ok = stats[i].merged_pct >= run.lo_pct && stats[i].merged_pct <= run.hi_pct;
        o.pass &= ok;
        o.detail += "r=" + fmt(run.ratio) + ": " + fmt(stats[i].merged_pct) + "% in [" + fmt(run.lo_pct, 0) + "," +
                    fmt(run.hi_pct, 0) + "]; ";
    }
    o.detail += "frontend tokens per ratio " + std::to_string(stats[0].frontend) + " over 3 utterances";
    return o;
}

Outcome criterion2(const std::vector<RatioStats>& stats) {
    Outcome o;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const auto& run = kRatioRuns[i];
        const double identity = 40.0 / (1.0 - stats[i].merged_pct / 100.0);
        const bool ok = std::abs(stats[i].mean_ms - run.ms_target) <= kMsTolerance &&
                        std::abs(stats[i].mean_ms - identity) <= kIdentityTolerance;
        o.pass &= ok;
        if (i) o.detail += "; ";
        o.detail += fmt(stats[i].mean_ms) + " ms (ref " + fmt(run.ms_target, 0) + "+-6, 40/(1-f)=" + fmt(identity) + ")";
    }
    return o;
}

// ---- criterion 3 ------------------------------------------------------------

Outcome criterion3() {
    Outcome o;
    std::mt19937_64 gen(3);
    std::size_t cases = 0;
    for (std::size_t n : {2u, 10u, 64u, 250u, 1000u}) {
        for (auto sel : {Selector::GreedyScore, Selector::ExactDP}) {
            TokenSequence seq;
            seq.embeddings = oracle::random_matrix(n, 16, gen, -3.0f, 3.0f);
            for (std::size_t i = 0; i < n; ++i) seq.spans.push_back({static_cast<std::uint32_t>(4 * i), 4});
            const Matrix keys(n, 16, 0.25f);
            const auto out = apply_policy(seq, keys, MergePolicy::fixed_ratio(0.5, sel)).tokens;
            Matrix pooled(n / 2, 16);
            for (std::size_t i = 0; i < n / 2; ++i)
                for (std::size_t c = 0; c < 16; ++c)
                    pooled(i, c) = (seq.embeddings(2 * i, c) + seq.embeddings(2 * i + 1, c)) * 0.5f;
            bool ok = out.embeddings == pooled && out.size() == n / 2;
            for (std::size_t i = 0; ok && i < out.size(); ++i) ok = out.spans[i] == Span{static_cast<std::uint32_t>(8 * i), 8};
            o.pass &= ok;
            ++cases;
        }
    }
    o.detail = std::to_string(cases) + " sequences (n up to 1000, both selectors) bitwise equal to 2x mean pooling";
    return o;
}

// ---- criterion 4 ------------------------------------------------------------

Outcome criterion4() {
    Outcome o;
    std::mt19937_64 gen(4);
    std::size_t instances = 0, checks = 0, mismatches = 0;
    for (; instances < 10000; ++instances) {
        const std::size_t n = 2 + gen() % 13;  // 2..14 tokens
        std::vector<double> s(n - 1);
        // Dyadic scores so every subset total is exact: half with heavy ties.
        const bool ties = instances % 2 == 0;
        for (auto& x : s) {
            const auto q = static_cast<double>(ties ? gen() % 5 : gen() % (1u << 21));
            x = ties ? q * 0.25 - 0.5 : q / static_cast<double>(1u << 20) - 1.0;
        }
        for (std::size_t k = 0; k <= n / 2 + 1; ++k) {
            const auto dp = select_pairs_budget(s, k, Selector::ExactDP);
            const std::size_t want = std::min(k, n / 2);
            const double best = oracle::best_total_exact_count(s, want);
            const bool dp_ok = dp.size() == want && dp.total_score() == best;
            const auto gr = select_pairs_budget(s, k, Selector::GreedyScore);
            const bool gr_ok = gr.pairs == oracle::greedy(s, k, -1e300);
            mismatches += !dp_ok + !gr_ok;
            checks += 2;
        }
        const double tau = s[gen() % s.size()];
        const auto [bn, bt] = oracle::best_threshold(s, tau);
        const auto dpt = select_pairs_threshold(s, tau, Selector::ExactDP);
        const auto grt = select_pairs_threshold(s, tau, Selector::GreedyScore);
        mismatches += !(dpt.size() == bn && dpt.total_score() == bt);
        mismatches += !(grt.pairs == oracle::greedy(s, s.size(), tau));
        checks += 2;
    }
    o.pass = mismatches == 0;
    o.detail = std::to_string(instances) + " instances, " + std::to_string(checks) + " comparisons, " +
               std::to_string(mismatches) + " mismatches";
    return o;
}

// ---- criterion 5 ------------------------------------------------------------

Outcome criterion5() {
    Outcome o;
    constexpr double h = 1e-3;
    constexpr double tol = 1e-4;
    std::mt19937_64 gen(5);
    double worst = 0.0;
    std::size_t entries = 0;
    bool float_path_ok = true;
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t rows = 2 + gen() % 11, cols = 1 + gen() % 5;
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        std::vector<double> x(rows * cols);
        for (auto& v : x) v = u(gen);
        std::vector<double> scores(rows - 1);
        for (auto& v : scores) v = u(gen);
        const auto sel = select_pairs_budget(scores, gen() % (rows / 2 + 1), Selector::GreedyScore);
        const std::span<const std::size_t> pairs(sel.pairs);

        // Analytic map: output row r averages input rows in src[r] (one or two).
        std::vector<std::vector<std::size_t>> src;
        for (std::size_t r = 0, p = 0; r < rows; ++r) {
            if (p < sel.pairs.size() && sel.pairs[p] == r) {
                src.push_back({r, r + 1});
                ++p;
                ++r;
            } else {
                src.push_back({r});
            }
        }
        const std::size_t out_rows = src.size();
        auto f = [&](const std::vector<double>& in) {
            return merge_rows<double>(in, rows, cols, pairs);
        };
        for (std::size_t j = 0; j < rows * cols; ++j) {
            auto xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            const auto yp = f(xp), ym = f(xm);
            for (std::size_t i = 0; i < out_rows * cols; ++i) {
                const double fd = (yp[i] - ym[i]) / (2 * h);
                const std::size_t orow = i / cols, oc = i % cols, irow = j / cols, ic = j % cols;
                double an = 0.0;
                if (oc == ic && std::find(src[orow].begin(), src[orow].end(), irow) != src[orow].end())
                    an = src[orow].size() == 2 ? 0.5 : 1.0;
                const double rel = std::abs(fd - an) / std::max(1.0, std::abs(an));
                worst = std::max(worst, rel);
                ++entries;
            }
        }
        // The float merge used by the encoder is the same arithmetic.
        TokenSequence seq;
        seq.embeddings = Matrix(rows, cols);
        for (std::size_t i = 0; i < x.size(); ++i) seq.embeddings.data()[i] = static_cast<float>(x[i]);
        for (std::size_t r = 0; r < rows; ++r) seq.spans.push_back({static_cast<std::uint32_t>(r), 1});
        const auto merged = merge_pairs(seq, sel);
        const auto ref = merge_rows<float>(seq.embeddings.data(), rows, cols, pairs);
        float_path_ok &= merged.embeddings == Matrix(out_rows, cols, ref);
    }
    o.pass = worst <= tol && float_path_ok;
    o.detail = "100 instances, " + std::to_string(entries) + " Jacobian entries, worst relative error " +
               sci(worst) + " (tol 1e-4)" + (float_path_ok ? "" : "; float merge path differs");
    return o;
}

// ---- criterion 6 ------------------------------------------------------------

TokenSequence unit_spans(Matrix emb) {
    TokenSequence t;
    t.spans.reserve(emb.rows());
    for (std::size_t i = 0; i < emb.rows(); ++i) t.spans.push_back({static_cast<std::uint32_t>(4 * i), 4});
    t.embeddings = std::move(emb);
    return t;
}

Outcome criterion6() {
    Outcome o;
    std::mt19937_64 gen(6);
    std::size_t violations = 0, total_u = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        JointConfig jc;
        jc.vocab_size = 2 + gen() % 30;
        jc.d_enc = 1 + gen() % 16;
        jc.d_pred = 1 + gen() % 16;
        jc.d_joint = 1 + gen() % 16;
        auto w = init_transducer(jc, gen());
        // Some trials push against blank so the emission cap is exercised.
        if (trial % 3 == 0) w.joint.out_bias[jc.blank] = -static_cast<float>(gen() % 8);
        const auto enc = unit_spans(oracle::random_matrix(1 + gen() % 60, jc.d_enc, gen, -4.0f, 4.0f));
        const auto r = greedy_decode(enc, w, jc, 1 + gen() % 5);
        violations += r.steps != r.T + r.U;
        total_u += r.U;
    }

    // Real encoder output, unmerged vs 73% merged, through the all-blank joint.
    EncoderConfig cfg = EncoderConfig::toy18();
    const auto ew = init_weights(cfg, 0);
    const auto feats = synth_features(4000, cfg.n_mels, 0.9, 60);
    cfg.policy = MergePolicy::fixed_ratio(0.0);
    const auto plain = encode(feats, ew, cfg);
    cfg.policy = MergePolicy::fixed_ratio(0.2);
    const auto merged = encode(feats, ew, cfg);
    JointConfig jc;
    jc.d_enc = cfg.d_model;
    auto tw = init_transducer(jc, 1);
    rig_all_blank(tw, jc);
    const auto d0 = greedy_decode(plain.tokens, tw, jc);
    const auto d1 = greedy_decode(merged.tokens, tw, jc);
    const double token_cut = merged.merged_fraction();
    const double step_cut = 1.0 - static_cast<double>(d1.steps) / static_cast<double>(d0.steps);

    std::mt19937_64 g2(61);
    const auto hundred = unit_spans(oracle::random_matrix(100, jc.d_enc, g2));
    const auto s100 = greedy_decode(hundred, tw, jc).steps;
    // 73% fewer tokens: the first 27 of the same 100.
    const auto prefix = unit_spans(Matrix(27, jc.d_enc, std::vector<float>(hundred.embeddings.data().begin(),
                                                                             hundred.embeddings.data().begin() + 27 * jc.d_enc)));
    const auto s27b = greedy_decode(prefix, tw, jc).steps;

    o.pass = violations == 0 && d0.steps == plain.tokens.size() && d1.steps == merged.tokens.size() &&
             step_cut == token_cut && s100 == 100 && s27b == 27;
    o.detail = "1000 decodes, " + std::to_string(violations) + " violations of steps=T+U (total U " +
               std::to_string(total_u) + "); all-blank: " + std::to_string(d0.steps) + " -> " +
               std::to_string(d1.steps) + " steps, cut " + fmt(100 * step_cut) + "% = token cut " +
               fmt(100 * token_cut) + "%; 100 -> 27 tokens gives " + std::to_string(s100) + " -> " +
               std::to_string(s27b) + " steps";
    return o;
}

// ---- criterion 7 ------------------------------------------------------------

double time_ms(const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

Outcome criterion7() {
    Outcome o;
    EncoderConfig cfg = EncoderConfig::toy18();
    const auto w = init_weights(cfg, 0);
    const auto feats = synth_features(8000, cfg.n_mels, 0.9, 70);
    const double ratios[] = {0.0, 0.10, 0.15, 0.20};
    std::vector<std::vector<double>> samples(4);
    std::size_t front = 0;
    // Round-robin so drift affects every ratio alike.
    for (int rep = 0; rep < 5; ++rep) {
        for (std::size_t i = 0; i < 4; ++i) {
            auto c = cfg;
            c.policy = MergePolicy::fixed_ratio(ratios[i]);
            samples[i].push_back(time_ms([&] { front = encode(feats, w, c).frontend_tokens; }));
        }
    }
    std::vector<double> med;
    for (auto& s : samples) med.push_back(median(s));
    const double speedup = med[0] / med[3];
    const bool monotone = med[0] > med[1] && med[1] > med[2] && med[2] > med[3];
    o.pass = front >= 2000 && speedup >= 1.3 && monotone;
    o.detail = std::to_string(front) + " frontend tokens; median ms r=0/0.10/0.15/0.20: " + fmt(med[0], 0) + "/" +
               fmt(med[1], 0) + "/" + fmt(med[2], 0) + "/" + fmt(med[3], 0) + "; speedup at 20% " + fmt(speedup) +
               "x (need 1.30x)" + (monotone ? "" : "; not monotone");
    return o;
}

// ---- criterion 8 ------------------------------------------------------------

Outcome criterion8() {
    Outcome o;
    const EncoderConfig cfg = EncoderConfig::toy();
    const auto w = init_weights(cfg, 0);
    LatencySpec spec;
    spec.history_counts = {0, 1, 2};
    spec.utterance_frames = 1600;
    spec.repetitions = 9;
    spec.seed = 80;
    const auto unmerged = latency_split(spec, w, cfg, BoundaryPolicy{MergePolicy::fixed_ratio(0.0), std::nullopt});
    LatencySpec two = spec;
    two.history_counts = {2};
    const auto merged = latency_split(two, w, cfg, BoundaryPolicy{MergePolicy::fixed_ratio(0.2), std::nullopt});

    const bool increasing = unmerged[0].encoder_ms < unmerged[1].encoder_ms && unmerged[1].encoder_ms < unmerged[2].encoder_ms;
    double dmin = unmerged[0].post_encoder_ms, dmax = dmin;
    for (const auto& r : unmerged) {
        dmin = std::min(dmin, r.post_encoder_ms);
        dmax = std::max(dmax, r.post_encoder_ms);
    }
    const double spread = (dmax - dmin) / dmin;
    const bool reduced = merged[0].encoder_ms < unmerged[2].encoder_ms;
    o.pass = increasing && spread < 0.10 && reduced;
    o.detail = "encoder ms h=0/1/2: " + fmt(unmerged[0].encoder_ms, 1) + "/" + fmt(unmerged[1].encoder_ms, 1) + "/" +
               fmt(unmerged[2].encoder_ms, 1) + "; post-encoder ms " + fmt(unmerged[0].post_encoder_ms, 3) + "/" +
               fmt(unmerged[1].post_encoder_ms, 3) + "/" + fmt(unmerged[2].post_encoder_ms, 3) + " (spread " +
               fmt(100 * spread, 1) + "%, need <10%); h=2 history-merged 20%: " + fmt(merged[0].encoder_ms, 1) +
               " ms vs " + fmt(unmerged[2].encoder_ms, 1) + " ms";
    return o;
}

// ---- criterion 9 ------------------------------------------------------------

Outcome criterion9(const fs::path& workdir) {
    Outcome o;
    const EncoderConfig cfg = EncoderConfig::toy();
    SweepSpec spec;
    spec.utterance_frames = {4000, 3200};
    spec.seed = 90;
    const Report rep = run_ondemand({0.80, 0.85, 0.90, 0.95}, spec, cfg);
    const fs::path csv = workdir / "ondemand.csv";
    {
        std::ofstream out(csv, std::ios::binary);
        write_report_csv(out, rep);
    }
    std::ifstream in(csv, std::ios::binary);
    const Report back = read_report_csv(in);
    bool monotone = back.rows.size() == 4;
    for (std::size_t i = 1; monotone && i < back.rows.size(); ++i)
        monotone = back.rows[i].merged_pct <= back.rows[i - 1].merged_pct;
    o.pass = monotone;
    o.detail = "merged % at tau 0.80/0.85/0.90/0.95:";
    for (const auto& r : back.rows) o.detail += " " + fmt(r.merged_pct);
    o.detail += "; CSV " + csv.filename().string();
    return o;
}

// ---- criterion 10 -----------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

Outcome criterion10(const fs::path& cli, const fs::path& workdir) {
    Outcome o;
    struct Step {
        std::string name;
        std::string args;
        std::vector<std::string> outputs;
    };
    const std::vector<Step> steps = {
        {"synth", "synth --frames 1200 --seed 7 --out feat.atmx", {"feat.atmx", "feat.atmx.meta"}},
        {"synth-history", "synth --frames 800 --seed 8 --out h1.atmx", {"h1.atmx"}},
        {"synth-history", "synth --frames 800 --seed 9 --out h2.atmx", {"h2.atmx"}},
        {"encode", "encode --preset toy18 --seed 7 --ratio 0.2 --in feat.atmx --out tok.atmx --trace trace.jsonl",
         {"tok.atmx", "tok.atmx.spans", "trace.jsonl"}},
        {"decode", "decode --seed 7 --in tok.atmx --out dec.json", {"dec.json"}},
        {"sweep", "sweep --seed 7 --grid 0.1,0.2 --frames 1200,800 --out sweep.csv", {"sweep.csv"}},
        {"longform", "longform --seed 7 --manifest manifest.json --out lf.atmx --trace lf.jsonl",
         {"lf.atmx", "lf.atmx.spans", "lf.jsonl"}},
        {"ondemand", "ondemand --seed 7 --frames 1200 --out od.csv", {"od.csv"}},
    };
    std::vector<std::string> runs;
    for (const char* run : {"run_a", "run_b"}) {
        const fs::path dir = workdir / run;
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::ofstream(dir / "manifest.json") << R"({"utterances": ["h1.atmx", "h2.atmx", "feat.atmx"]})";
        for (const auto& s : steps) {
            const std::string cmd = "cd " + quote(dir) + " && " + quote(cli) + " " + s.args + " > /dev/null";
            if (std::system(cmd.c_str()) != 0) {
                o.pass = false;
                o.detail += s.name + " failed in " + run + "; ";
            }
        }
    }
    std::size_t compared = 0;
    std::vector<std::string> seen;
    for (const auto& s : steps) {
        bool same = true;
        for (const auto& f : s.outputs) {
            const auto a = slurp(workdir / "run_a" / f), b = slurp(workdir / "run_b" / f);
            same &= !a.empty() && a == b;
            ++compared;
        }
        o.pass &= same;
        if (std::find(seen.begin(), seen.end(), s.name) == seen.end()) {
            seen.push_back(s.name);
            o.detail += s.name + (same ? " identical; " : " DIFFERS; ");
        }
    }
    o.detail += std::to_string(compared) + " files compared";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"A-ToMe acceptance checks"};
    std::string cli_path;
    std::string workdir = "acceptance_work";
    app.add_option("--cli", cli_path, "path to the atome executable")->required();
    app.add_option("--workdir", workdir, "scratch directory");
    CLI11_PARSE(app, argc, argv);

    const fs::path work = workdir;
    fs::create_directories(work);

    int failures = 0;
    auto report = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
        Outcome o;
        const double ms = time_ms([&] {
            try {
                o = fn();
            } catch (const std::exception& e) {
                o.pass = false;
                o.detail = std::string("exception: ") + e.what();
            }
        });
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << o.detail << " ("
                  << fmt(ms / 1000.0, 1) << " s)" << std::endl;
    };

    std::vector<RatioStats> stats;
    report(1, "merged-token percentages", [&] {
        stats = ratio_stats();
        return criterion1(stats);
    });
    report(2, "average token length", [&] { return criterion2(stats); });
    report(3, "average-pooling equivalence", criterion3);
    report(4, "pair-selection oracle", criterion4);
    report(5, "merge Jacobian", criterion5);
    report(6, "decode step law", criterion6);
    report(7, "encoder speedup", criterion7);
    report(8, "long-form scaling", criterion8);
    report(9, "on-demand threshold sweep", [&] { return criterion9(work); });
    report(10, "CLI determinism", [&] { return criterion10(fs::absolute(cli_path), fs::absolute(work)); });
    std::cout << (failures == 0 ? "all 10 criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
