#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atome/error.hpp"
#include "atome/linalg.hpp"

namespace atome {

/// Provenance of one token: the contiguous run of base frames it covers.
struct Span {
    std::uint32_t start_frame = 0;
    std::uint32_t n_frames = 1;

    friend bool operator==(const Span&, const Span&) = default;
};

/// Ordered token embeddings with per-token frame spans.
///
/// Spans are contiguous and ordered, every token covers at least one frame,
/// and the embedding row count equals the span count. Merging preserves the
/// total number of frames.
struct TokenSequence {
    Matrix embeddings;
    std::vector<Span> spans;
    double frame_ms = 10.0;

    std::size_t size() const noexcept { return spans.size(); }
    std::size_t total_frames() const noexcept;
    double duration_ms(std::size_t i) const { return spans[i].n_frames * frame_ms; }

    // Throws InputError when any invariant above is broken.
    void validate() const;

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

enum class PolicyKind { FixedRatio, FixedThreshold };
enum class Selector { GreedyScore, ExactDP };

// Largest fraction of tokens a single merge layer may remove.
inline constexpr double kMaxMergeRatio = 0.5;

struct MergePolicy {
    PolicyKind kind = PolicyKind::FixedRatio;
    double ratio = 0.0;      // FixedRatio
    double threshold = 1.0;  // FixedThreshold
    Selector selector = Selector::GreedyScore;
    // Frame-count weighted average instead of the plain mean.
    bool weighted_mean = false;

    static MergePolicy fixed_ratio(double r, Selector s = Selector::GreedyScore);
    static MergePolicy fixed_threshold(double t, Selector s = Selector::GreedyScore);

    void validate() const;
    std::string describe() const;

    friend bool operator==(const MergePolicy&, const MergePolicy&) = default;
};

std::string to_string(PolicyKind k);
std::string to_string(Selector s);
PolicyKind parse_policy_kind(const std::string& s);
Selector parse_selector(const std::string& s);

/// Selected adjacent pairs, identified by their left token index.
struct PairSelection {
    std::vector<std::size_t> pairs;  // strictly increasing, gaps >= 2
    std::vector<double> scores;      // parallel to pairs

    std::size_t size() const noexcept { return pairs.size(); }
    bool empty() const noexcept { return pairs.empty(); }
    double total_score() const noexcept;
};

struct TraceEntry {
    std::size_t layer = 0;
    std::size_t n_before = 0;
    std::size_t n_after = 0;
    PairSelection selection;
    MergePolicy policy;
    // Pair budget for FixedRatio; a selection shorter than this is a shortfall.
    std::optional<std::size_t> budget;
    // Empty for utterance encoding; "history" or "current" in long-form runs.
    std::string segment;
};

struct MergeTrace {
    std::vector<TraceEntry> entries;

    std::size_t total_merged() const noexcept;
};

/// Cosine similarity of every adjacent pair of key rows. Length n-1 (empty for n <= 1).
std::vector<double> adjacent_similarities(const Matrix& keys);

PairSelection select_pairs_threshold(std::span<const double> scores, double threshold,
                                     Selector selector);

// Pair budget for `n_tokens` under `ratio`: floor(ratio * n).
std::size_t ratio_budget(double ratio, std::size_t n_tokens);

PairSelection select_pairs_ratio(std::span<const double> scores, double ratio, Selector selector);

/// Up to `k` pairs. GreedyScore stops early when conflicts exhaust candidates;
/// ExactDP returns the best-scoring set of exactly min(k, floor(n/2)) pairs.
PairSelection select_pairs_budget(std::span<const double> scores, std::size_t k,
                                  Selector selector);

// Throws SelectionError unless pairs are increasing, non-overlapping and < n_tokens - 1.
void validate_selection(const PairSelection& sel, std::size_t n_tokens);

enum class MergeMode { Mean, FrameWeighted };

/// Averages each selected (i, i+1) pair into one row.
///
/// Row-major `in` has `rows` x `cols` entries; `weights` (frame counts) is
/// read only for FrameWeighted. Generic over the element type so the same
/// arithmetic can be evaluated in double.
template <typename T>
std::vector<T> merge_rows(std::span<const T> in, std::size_t rows, std::size_t cols,
                          std::span<const std::size_t> pairs, MergeMode mode = MergeMode::Mean,
                          std::span<const std::uint32_t> weights = {}) {
    std::vector<T> out;
    out.reserve((rows - pairs.size()) * cols);
    std::size_t next = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* a = in.data() + r * cols;
        if (next < pairs.size() && pairs[next] == r) {
            const T* b = a + cols;
            if (mode == MergeMode::Mean) {
                for (std::size_t c = 0; c < cols; ++c) out.push_back((a[c] + b[c]) * T(0.5));
            } else {
                const T wa = static_cast<T>(weights[r]);
                const T wb = static_cast<T>(weights[r + 1]);
                const T inv = T(1) / (wa + wb);
                for (std::size_t c = 0; c < cols; ++c) out.push_back((wa * a[c] + wb * b[c]) * inv);
            }
            ++next;
            ++r;
        } else {
            out.insert(out.end(), a, a + cols);
        }
    }
    return out;
}

TokenSequence merge_pairs(const TokenSequence& seq, const PairSelection& sel,
                          MergeMode mode = MergeMode::Mean);

struct MergeOutcome {
    TokenSequence tokens;
    TraceEntry entry;
};

/// One A-ToMe step: similarities from `keys`, selection by policy, merge.
MergeOutcome apply_policy(const TokenSequence& seq, const Matrix& keys, const MergePolicy& policy,
                          std::size_t layer = 0);

// Same step with similarities already computed (length seq.size() - 1).
MergeOutcome apply_policy_scored(const TokenSequence& seq, std::span<const double> scores,
                                 const MergePolicy& policy, std::size_t layer = 0);

// Selection only, dispatched on policy kind; records nothing.
PairSelection select_by_policy(std::span<const double> scores, const MergePolicy& policy,
                               std::optional<std::size_t>* budget = nullptr);

}  // namespace atome
