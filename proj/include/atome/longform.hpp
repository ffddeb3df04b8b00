#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "atome/encoder.hpp"
#include "atome/transducer.hpp"

namespace atome {

/// History utterances followed by the current one, as one feature matrix.
struct LongFormBatch {
    FeatureSequence features;
    std::size_t boundary_frame = 0;  // first frame of the current utterance
    std::size_t n_history = 0;
};

struct BoundaryPolicy {
    MergePolicy history;
    std::optional<MergePolicy> current;  // absent: current tokens are never merged

    void validate() const;
};

/// Concatenates in order. With `align` > 1 each history utterance is first
/// trimmed to a whole number of `align` frames so the boundary falls on a
/// frontend stack edge.
LongFormBatch concat_features(std::span<const FeatureSequence> history, const FeatureSequence& current,
                              std::size_t align = 1);

struct LongFormResult {
    TokenSequence current;  // tokens whose spans start at or after the boundary
    EncodeResult full;      // every token, with history and current trace entries
};

/// Joint encoding with segment-aware merging: a token is history iff its span
/// ends at or before the boundary. Pairs that straddle the boundary are never
/// merged; each segment gets its own policy and its own ratio budget.
LongFormResult encode_longform(const LongFormBatch& batch, const EncoderWeights& w, const EncoderConfig& cfg,
                               const BoundaryPolicy& bp);

// Merge hook implementing the segment rule above; exposed for tests.
MergeStep boundary_merge_step(std::size_t boundary_frame, const BoundaryPolicy& bp);

struct LatencySpec {
    std::vector<std::size_t> history_counts = {0, 1, 2};
    std::size_t utterance_frames = 1600;
    double correlation = 0.9;
    std::uint64_t seed = 0;
    std::size_t repetitions = 3;
    std::size_t decode_passes = 15;  // timed decodes per repetition; the fastest is kept
};

struct LatencyRow {
    std::size_t n_history = 0;
    std::size_t frontend_tokens = 0;
    std::size_t encoder_tokens = 0;  // after merging, all segments
    std::size_t current_tokens = 0;
    double encoder_ms = 0.0;         // median over repetitions
    double post_encoder_ms = 0.0;    // greedy decode of the current slice, all-blank joint
    std::size_t decode_steps = 0;
    std::size_t repetitions = 0;
};

/// Wall-clock split between encoder forward and post-encoder decoding for
/// each history count. Utterances are synthetic, current one fixed by seed.
std::vector<LatencyRow> latency_split(const LatencySpec& spec, const EncoderWeights& w, const EncoderConfig& cfg,
                                      const BoundaryPolicy& bp);

double median(std::vector<double> values);

}  // namespace atome
