#include "atome/merge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace atome {

std::size_t TokenSequence::total_frames() const noexcept {
    std::size_t total = 0;
    for (const auto& s : spans) total += s.n_frames;
    return total;
}

void TokenSequence::validate() const {
    if (embeddings.rows() != spans.size()) {
        throw InputError("token sequence: " + std::to_string(embeddings.rows()) +
                         " embedding rows for " + std::to_string(spans.size()) + " spans");
    }
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (spans[i].n_frames == 0) throw InputError("token sequence: empty span at " + std::to_string(i));
        if (i > 0 && spans[i].start_frame != spans[i - 1].start_frame + spans[i - 1].n_frames) {
            throw InputError("token sequence: span " + std::to_string(i) + " is not contiguous");
        }
    }
}

MergePolicy MergePolicy::fixed_ratio(double r, Selector s) {
    MergePolicy p;
    p.kind = PolicyKind::FixedRatio;
    p.ratio = r;
    p.selector = s;
    p.validate();
    return p;
}

MergePolicy MergePolicy::fixed_threshold(double t, Selector s) {
    MergePolicy p;
    p.kind = PolicyKind::FixedThreshold;
    p.threshold = t;
    p.selector = s;
    p.validate();
    return p;
}

void MergePolicy::validate() const {
    if (kind == PolicyKind::FixedRatio) {
        if (!(ratio >= 0.0 && ratio <= kMaxMergeRatio)) {
            throw PolicyError("merge ratio must lie in [0, 0.5], got " + std::to_string(ratio));
        }
    } else if (!std::isfinite(threshold)) {
        throw PolicyError("merge threshold must be finite");
    }
}

std::string MergePolicy::describe() const {
    std::ostringstream os;
    if (kind == PolicyKind::FixedRatio) {
        os << "ratio=" << ratio;
    } else {
        os << "threshold=" << threshold;
    }
    os << ',' << to_string(selector);
    if (weighted_mean) os << ",weighted";
    return os.str();
}

std::string to_string(PolicyKind k) { return k == PolicyKind::FixedRatio ? "ratio" : "threshold"; }
std::string to_string(Selector s) { return s == Selector::GreedyScore ? "greedy" : "exact"; }

PolicyKind parse_policy_kind(const std::string& s) {
    if (s == "ratio") return PolicyKind::FixedRatio;
    if (s == "threshold") return PolicyKind::FixedThreshold;
    throw PolicyError("unknown policy kind '" + s + "' (expected ratio|threshold)");
}

Selector parse_selector(const std::string& s) {
    if (s == "greedy") return Selector::GreedyScore;
    if (s == "exact") return Selector::ExactDP;
    throw PolicyError("unknown selector '" + s + "' (expected greedy|exact)");
}

double PairSelection::total_score() const noexcept {
    double t = 0.0;
    for (double s : scores) t += s;
    return t;
}

std::size_t MergeTrace::total_merged() const noexcept {
    std::size_t t = 0;
    for (const auto& e : entries) t += e.selection.size();
    return t;
}

std::vector<double> adjacent_similarities(const Matrix& keys) {
    std::vector<double> out;
    if (keys.rows() < 2) return out;
    out.reserve(keys.rows() - 1);
    for (std::size_t i = 0; i + 1 < keys.rows(); ++i) out.push_back(cosine(keys.row(i), keys.row(i + 1)));
    return out;
}

namespace {

PairSelection finish(std::vector<std::size_t> pairs, std::span<const double> scores) {
    std::sort(pairs.begin(), pairs.end());
    PairSelection sel;
    sel.scores.reserve(pairs.size());
    for (std::size_t p : pairs) sel.scores.push_back(scores[p]);
    sel.pairs = std::move(pairs);
    return sel;
}

// Visits candidates by descending score, lower index first on ties, and keeps
// every pair whose tokens are still free. Stops after `limit` pairs.
PairSelection greedy_select(std::span<const double> scores, std::vector<std::size_t> candidates,
                            std::size_t limit) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<char> used(scores.size() + 1, 0);
    std::vector<std::size_t> chosen;
    for (std::size_t p : candidates) {
        if (chosen.size() >= limit) break;
        if (used[p] || used[p + 1]) continue;
        used[p] = used[p + 1] = 1;
        chosen.push_back(p);
    }
    return finish(std::move(chosen), scores);
}

// Follows recorded take/skip decisions back from pair index `m` (exclusive).
template <typename TookFn>
std::vector<std::size_t> backtrack(std::size_t m, std::size_t j, TookFn took) {
    std::vector<std::size_t> chosen;
    std::size_t p = m;
    while (p > 0) {
        if (took(p - 1, j)) {
            chosen.push_back(p - 1);
            --j;
            p = p >= 2 ? p - 2 : 0;
        } else {
            --p;
        }
    }
    return chosen;
}

PairSelection exact_budget(std::span<const double> scores, std::size_t k) {
    const std::size_t m = scores.size();
    const std::size_t target = std::min(k, (m + 1) / 2);
    if (target == 0) return {};
    const std::size_t w = target + 1;
    constexpr double kNone = -std::numeric_limits<double>::infinity();
    // f_prev = f[p-1], f_cur = f[p]: best total over pairs [0, p) with j taken.
    std::vector<double> f_prev(w, kNone), f_cur(w, kNone), f_next(w);
    f_prev[0] = f_cur[0] = 0.0;
    std::vector<char> took(m * w, 0);
    for (std::size_t p = 0; p < m; ++p) {
        f_next = f_cur;
        for (std::size_t j = 1; j < w; ++j) {
            if (f_prev[j - 1] == kNone) continue;
            const double cand = f_prev[j - 1] + scores[p];
            if (cand > f_next[j]) {
                f_next[j] = cand;
                took[p * w + j] = 1;
            }
        }
        f_prev = std::move(f_cur);
        f_cur = f_next;
    }
    auto chosen = backtrack(m, target, [&](std::size_t p, std::size_t j) { return took[p * w + j] != 0; });
    return finish(std::move(chosen), scores);
}

struct CountScore {
    std::size_t count = 0;
    double total = 0.0;

    bool better_than(const CountScore& o) const {
        return count != o.count ? count > o.count : total > o.total;
    }
};

PairSelection exact_threshold(std::span<const double> scores, double threshold) {
    const std::size_t m = scores.size();
    if (m == 0) return {};
    CountScore f_prev, f_cur;
    std::vector<char> took(m, 0);
    for (std::size_t p = 0; p < m; ++p) {
        CountScore f_next = f_cur;
        if (scores[p] >= threshold) {
            const CountScore cand{f_prev.count + 1, f_prev.total + scores[p]};
            if (cand.better_than(f_next)) {
                f_next = cand;
                took[p] = 1;
            }
        }
        f_prev = f_cur;
        f_cur = f_next;
    }
    auto chosen = backtrack(m, f_cur.count, [&](std::size_t p, std::size_t) { return took[p] != 0; });
    return finish(std::move(chosen), scores);
}

}  // namespace

PairSelection select_pairs_threshold(std::span<const double> scores, double threshold,
                                     Selector selector) {
    if (selector == Selector::ExactDP) return exact_threshold(scores, threshold);
    std::vector<std::size_t> candidates;
    for (std::size_t p = 0; p < scores.size(); ++p) {
        if (scores[p] >= threshold) candidates.push_back(p);
    }
    return greedy_select(scores, std::move(candidates), std::numeric_limits<std::size_t>::max());
}

std::size_t ratio_budget(double ratio, std::size_t n_tokens) {
    // Absorbs representation error such as 0.15 * 20 = 2.9999999999999996.
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n_tokens) + 1e-9));
}

PairSelection select_pairs_budget(std::span<const double> scores, std::size_t k, Selector selector) {
    if (selector == Selector::ExactDP) return exact_budget(scores, k);
    std::vector<std::size_t> candidates(scores.size());
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
    return greedy_select(scores, std::move(candidates), k);
}

PairSelection select_pairs_ratio(std::span<const double> scores, double ratio, Selector selector) {
    MergePolicy::fixed_ratio(ratio, selector);
    const std::size_t n = scores.empty() ? 0 : scores.size() + 1;
    return select_pairs_budget(scores, ratio_budget(ratio, n), selector);
}

PairSelection select_by_policy(std::span<const double> scores, const MergePolicy& policy,
                               std::optional<std::size_t>* budget) {
    policy.validate();
    if (policy.kind == PolicyKind::FixedThreshold) {
        if (budget) budget->reset();
        return select_pairs_threshold(scores, policy.threshold, policy.selector);
    }
    const std::size_t n = scores.empty() ? 0 : scores.size() + 1;
    const std::size_t k = ratio_budget(policy.ratio, n);
    if (budget) *budget = k;
    return select_pairs_budget(scores, k, policy.selector);
}

void validate_selection(const PairSelection& sel, std::size_t n_tokens) {
    if (sel.scores.size() != sel.pairs.size()) {
        throw SelectionError("selection has " + std::to_string(sel.pairs.size()) + " pairs but " +
                             std::to_string(sel.scores.size()) + " scores");
    }
    for (std::size_t i = 0; i < sel.pairs.size(); ++i) {
        const std::size_t p = sel.pairs[i];
        if (p + 1 >= n_tokens) {
            throw SelectionError("pair " + std::to_string(p) + " out of range for " +
                                 std::to_string(n_tokens) + " tokens");
        }
        if (i > 0 && p < sel.pairs[i - 1] + 2) {
            throw SelectionError("pairs " + std::to_string(sel.pairs[i - 1]) + " and " +
                                 std::to_string(p) + " overlap or are unsorted");
        }
    }
}

TokenSequence merge_pairs(const TokenSequence& seq, const PairSelection& sel, MergeMode mode) {
    if (seq.embeddings.rows() != seq.spans.size()) {
        throw InputError("merge_pairs: embeddings and spans disagree in length");
    }
    validate_selection(sel, seq.size());
    if (sel.empty()) return seq;

    std::vector<std::uint32_t> weights;
    if (mode == MergeMode::FrameWeighted) {
        weights.reserve(seq.size());
        for (const auto& s : seq.spans) weights.push_back(s.n_frames);
    }
    const std::size_t cols = seq.embeddings.cols();
    auto data = merge_rows<float>(seq.embeddings.data(), seq.size(), cols, sel.pairs, mode, weights);

    TokenSequence out;
    out.frame_ms = seq.frame_ms;
    out.spans.reserve(seq.size() - sel.size());
    std::size_t next = 0;
    for (std::size_t r = 0; r < seq.size(); ++r) {
        if (next < sel.pairs.size() && sel.pairs[next] == r) {
            out.spans.push_back({seq.spans[r].start_frame, seq.spans[r].n_frames + seq.spans[r + 1].n_frames});
            ++next;
            ++r;
        } else {
            out.spans.push_back(seq.spans[r]);
        }
    }
    out.embeddings = Matrix(out.spans.size(), cols, std::move(data));
    return out;
}

MergeOutcome apply_policy_scored(const TokenSequence& seq, std::span<const double> scores,
                                 const MergePolicy& policy, std::size_t layer) {
    const std::size_t expected = seq.size() == 0 ? 0 : seq.size() - 1;
    if (scores.size() != expected) {
        throw InputError("apply_policy: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(seq.size()) + " tokens");
    }
    MergeOutcome out;
    out.entry.layer = layer;
    out.entry.policy = policy;
    out.entry.n_before = seq.size();
    out.entry.selection = select_by_policy(scores, policy, &out.entry.budget);
    out.tokens = merge_pairs(seq, out.entry.selection,
                             policy.weighted_mean ? MergeMode::FrameWeighted : MergeMode::Mean);
    out.entry.n_after = out.tokens.size();
    return out;
}

MergeOutcome apply_policy(const TokenSequence& seq, const Matrix& keys, const MergePolicy& policy,
                          std::size_t layer) {
    if (keys.rows() != seq.size()) {
        throw InputError("apply_policy: " + std::to_string(keys.rows()) + " key rows for " +
                         std::to_string(seq.size()) + " tokens");
    }
    const auto scores = adjacent_similarities(keys);
    return apply_policy_scored(seq, scores, policy, layer);
}

}  // namespace atome
