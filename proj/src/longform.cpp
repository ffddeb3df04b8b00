#include "atome/longform.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

#include "atome/error.hpp"
#include "atome/synth.hpp"

namespace atome {

void BoundaryPolicy::validate() const {
    history.validate();
    if (current) current->validate();
}

LongFormBatch concat_features(std::span<const FeatureSequence> history, const FeatureSequence& current,
                              std::size_t align) {
    if (align == 0) throw InputError("concat_features: align must be >= 1");
    const std::size_t n_mels = current.n_mels();
    std::size_t total = current.n_frames();
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& h = history[i];
        if (h.n_mels() != n_mels) {
            throw InputError("concat_features: history " + std::to_string(i) + " has " + std::to_string(h.n_mels()) +
                             " mels, current has " + std::to_string(n_mels));
        }
        if (h.stride_ms != current.stride_ms) {
            throw InputError("concat_features: history " + std::to_string(i) + " stride differs from current");
        }
        total += h.n_frames() / align * align;
    }
    std::vector<float> data;
    data.reserve(total * n_mels);
    for (const auto& h : history) {
        const std::size_t keep = h.n_frames() / align * align;
        const auto src = h.frames.data();
        data.insert(data.end(), src.begin(), src.begin() + keep * n_mels);
    }
    LongFormBatch batch;
    batch.boundary_frame = data.size() / (n_mels == 0 ? 1 : n_mels);
    const auto cur = current.frames.data();
    data.insert(data.end(), cur.begin(), cur.end());
    batch.features.frames = Matrix(total, n_mels, std::move(data));
    batch.features.stride_ms = current.stride_ms;
    batch.n_history = history.size();
    return batch;
}

namespace {

// Selection restricted to tokens [lo, hi), with indices shifted back to the full sequence.
std::pair<PairSelection, std::optional<std::size_t>> select_segment(std::span<const double> scores, std::size_t lo,
                                                                    std::size_t hi, const MergePolicy& policy) {
    std::optional<std::size_t> budget;
    if (hi <= lo + 1) {
        if (policy.kind == PolicyKind::FixedRatio) budget = 0;
        return {PairSelection{}, budget};
    }
    auto sel = select_by_policy(scores.subspan(lo, hi - lo - 1), policy, &budget);
    for (auto& p : sel.pairs) p += lo;
    return {std::move(sel), budget};
}

}  // namespace

MergeStep boundary_merge_step(std::size_t boundary_frame, const BoundaryPolicy& bp) {
    bp.validate();
    return [boundary_frame, bp](const TokenSequence& tokens, const Matrix&, std::span<const double> scores,
                                std::size_t layer) {
        const std::size_t n = tokens.size();
        // History: span ends at or before the boundary. Current: span starts at or after it.
        std::size_t n_hist = 0;
        while (n_hist < n && tokens.spans[n_hist].start_frame + tokens.spans[n_hist].n_frames <= boundary_frame) {
            ++n_hist;
        }
        std::size_t cur_start = n_hist;
        while (cur_start < n && tokens.spans[cur_start].start_frame < boundary_frame) ++cur_start;

        std::vector<TraceEntry> entries;
        PairSelection all;
        auto add = [&](const PairSelection& sel, const MergePolicy& policy, std::optional<std::size_t> budget,
                       std::size_t seg_tokens, const char* name) {
            TraceEntry e;
            e.layer = layer;
            e.n_before = seg_tokens;
            e.n_after = seg_tokens - sel.size();
            e.selection = sel;
            e.policy = policy;
            e.budget = budget;
            e.segment = name;
            entries.push_back(std::move(e));
            all.pairs.insert(all.pairs.end(), sel.pairs.begin(), sel.pairs.end());
            all.scores.insert(all.scores.end(), sel.scores.begin(), sel.scores.end());
        };
        if (n_hist > 0) {
            auto [sel, budget] = select_segment(scores, 0, n_hist, bp.history);
            add(sel, bp.history, budget, n_hist, "history");
        }
        if (bp.current) {
            auto [sel, budget] = select_segment(scores, cur_start, n, *bp.current);
            add(sel, *bp.current, budget, n - cur_start, "current");
        }
        const bool weighted = bp.history.weighted_mean || (bp.current && bp.current->weighted_mean);
        TokenSequence merged = merge_pairs(tokens, all, weighted ? MergeMode::FrameWeighted : MergeMode::Mean);
        return std::pair{std::move(merged), std::move(entries)};
    };
}

LongFormResult encode_longform(const LongFormBatch& batch, const EncoderWeights& w, const EncoderConfig& cfg,
                               const BoundaryPolicy& bp) {
    if (batch.boundary_frame > batch.features.n_frames()) {
        throw InputError("encode_longform: boundary frame " + std::to_string(batch.boundary_frame) +
                         " beyond " + std::to_string(batch.features.n_frames()) + " frames");
    }
    LongFormResult r;
    r.full = encode_with(batch.features, w, cfg, boundary_merge_step(batch.boundary_frame, bp));
    const auto& all = r.full.tokens;
    std::size_t first = 0;
    while (first < all.size() && all.spans[first].start_frame < batch.boundary_frame) ++first;
    r.current.frame_ms = all.frame_ms;
    r.current.spans.assign(all.spans.begin() + static_cast<std::ptrdiff_t>(first), all.spans.end());
    const std::size_t d = all.embeddings.cols();
    const auto src = all.embeddings.data();
    r.current.embeddings = Matrix(all.size() - first, d,
                                  std::vector<float>(src.begin() + static_cast<std::ptrdiff_t>(first * d), src.end()));
    return r;
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

std::vector<LatencyRow> latency_split(const LatencySpec& spec, const EncoderWeights& w, const EncoderConfig& cfg,
                                      const BoundaryPolicy& bp) {
    if (spec.repetitions == 0) throw InputError("latency_split: repetitions must be >= 1");
    if (spec.decode_passes == 0) throw InputError("latency_split: decode_passes must be >= 1");
    using Clock = std::chrono::steady_clock;
    auto ms_since = [](Clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    };

    JointConfig jc;
    jc.d_enc = cfg.d_model;
    TransducerWeights tw = init_transducer(jc, spec.seed + 1);
    rig_all_blank(tw, jc);

    const FeatureSequence current = synth_features(spec.utterance_frames, cfg.n_mels, spec.correlation, spec.seed);
    // Repetitions run round-robin over history counts so transient load affects every row alike.
    std::vector<LongFormBatch> batches;
    for (std::size_t n_hist : spec.history_counts) {
        std::vector<FeatureSequence> history;
        for (std::size_t h = 0; h < n_hist; ++h) {
            history.push_back(
                synth_features(spec.utterance_frames, cfg.n_mels, spec.correlation, spec.seed + 1000 + h));
        }
        batches.push_back(concat_features(history, current, cfg.frontend_factor));
    }
    const std::size_t n_rows = batches.size();
    std::vector<LatencyRow> rows(n_rows);
    std::vector<std::vector<double>> enc_ms(n_rows), dec_ms(n_rows);
    for (std::size_t rep = 0; rep < spec.repetitions; ++rep) {
        std::vector<TokenSequence> current_slices;
        for (std::size_t i = 0; i < n_rows; ++i) {
            const auto t0 = Clock::now();
            LongFormResult r = encode_longform(batches[i], w, cfg, bp);
            enc_ms[i].push_back(ms_since(t0));
            LatencyRow& row = rows[i];
            row.n_history = spec.history_counts[i];
            row.repetitions = spec.repetitions;
            row.frontend_tokens = r.full.frontend_tokens;
            row.encoder_tokens = r.full.tokens.size();
            row.current_tokens = r.current.size();
            current_slices.push_back(std::move(r.current));
        }
        // Decode passes alternate between rows so load changes hit all rows alike; the fastest pass is kept.
        std::vector<double> best(n_rows, std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < n_rows; ++i) rows[i].decode_steps = greedy_decode(current_slices[i], tw, jc).steps;
        for (std::size_t pass = 0; pass < spec.decode_passes; ++pass) {
            for (std::size_t i = 0; i < n_rows; ++i) {
                const auto t0 = Clock::now();
                greedy_decode(current_slices[i], tw, jc);
                best[i] = std::min(best[i], ms_since(t0));
            }
        }
        for (std::size_t i = 0; i < n_rows; ++i) dec_ms[i].push_back(best[i]);
    }
    for (std::size_t i = 0; i < n_rows; ++i) {
        rows[i].encoder_ms = median(enc_ms[i]);
        rows[i].post_encoder_ms = median(dec_ms[i]);
    }
    return rows;
}

}  // namespace atome
