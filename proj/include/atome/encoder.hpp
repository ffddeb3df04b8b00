#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atome/linalg.hpp"
#include "atome/matrix_io.hpp"
#include "atome/merge.hpp"

namespace atome {

/// Encoder shape and merge placement.
///
/// The zero-argument constructor gives the 6-layer toy model with A-ToMe at
/// every third layer ({2, 5}). `toy18()` keeps the toy widths but uses the
/// full 18-layer stack with merge layers {2, 5, 8, 11, 14, 17}; `full()` is the
/// 18 x 512 / 8 heads / 2048 FFN layout.
struct EncoderConfig {
    std::size_t n_layers = 6;
    std::vector<std::size_t> merge_layers = {2, 5};
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ffn = 128;
    std::size_t frontend_factor = 4;
    std::size_t n_mels = 80;
    MergePolicy policy = MergePolicy::fixed_ratio(0.1);
    std::uint64_t rng_seed = 0;
    bool positional_encoding = false;
    float ln_eps = 1e-5f;

    static EncoderConfig toy();
    static EncoderConfig toy18();
    static EncoderConfig full();
    static EncoderConfig preset(const std::string& name);

    // Every third layer starting at 2: {2, 5, 8, ...} below n_layers.
    static std::vector<std::size_t> every_third(std::size_t n_layers);

    bool is_merge_layer(std::size_t layer) const;
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Applies "key=value" overrides (same keys as the config file). Unknown keys
// raise FormatError naming the key.
void apply_config_values(EncoderConfig& cfg, const KeyValues& kv);
EncoderConfig load_encoder_config(const std::filesystem::path& path, EncoderConfig base = {});
KeyValues to_key_values(const EncoderConfig& cfg);
const std::vector<std::string>& encoder_config_keys();

/// Acoustic frames, one row per base frame.
struct FeatureSequence {
    Matrix frames;
    double stride_ms = 10.0;

    std::size_t n_frames() const noexcept { return frames.rows(); }
    std::size_t n_mels() const noexcept { return frames.cols(); }
};

// ATMX payload plus "<path>.meta" sidecar holding stride_ms.
void write_features(const std::filesystem::path& path, const FeatureSequence& f);
FeatureSequence read_features(const std::filesystem::path& path);

struct TransformerLayerWeights {
    Vector ln1_gain, ln1_bias;
    Matrix wq, wk, wv, wo;
    Vector bq, bk, bv, bo;
    Vector ln2_gain, ln2_bias;
    Matrix w1, w2;
    Vector b1, b2;
};

struct EncoderWeights {
    Matrix frontend_w;  // (frontend_factor * n_mels) x d_model
    Vector frontend_b;
    std::vector<TransformerLayerWeights> layers;
    Vector final_gain, final_bias;

    friend bool operator==(const EncoderWeights& a, const EncoderWeights& b);
};

/// Scaled-uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every
/// projection, zero biases, unit layer-norm gains. Draws come from
/// xoshiro256** seeded through SplitMix64, in a fixed parameter order, so
/// the same seed reproduces the same bits on any IEEE-754 platform.
EncoderWeights init_weights(const EncoderConfig& cfg, std::uint64_t seed);

/// Stacks `frontend_factor` consecutive frames and projects them to d_model.
/// Trailing frames that do not fill a whole stack are dropped.
TokenSequence frontend(const FeatureSequence& features, const EncoderConfig& cfg,
                       const EncoderWeights& w);

struct LayerStats {
    std::size_t layer = 0;
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    // Adjacent key cosines before this layer's merge (length n_in - 1).
    std::vector<double> similarities;
    // max |sum_j attn(i, j) - 1| over heads and query rows.
    double attention_row_error = 0.0;
    // Full concatenated keys; filled only when EncodeOptions::record_keys is set.
    std::optional<Matrix> keys;

    std::optional<double> mean_similarity() const;
};

/// Merge hook run between MHSA and FFN of a merge layer. Receives the
/// post-residual tokens, this layer's keys and their adjacent similarities.
using MergeStep = std::function<std::pair<TokenSequence, std::vector<TraceEntry>>(
    const TokenSequence& tokens, const Matrix& keys, std::span<const double> scores,
    std::size_t layer)>;

// Policy-driven hook used by plain encoding.
MergeStep policy_merge_step(const MergePolicy& policy);

struct LayerOutput {
    TokenSequence tokens;
    std::vector<TraceEntry> entries;
    LayerStats stats;
};

/// Pre-norm Transformer layer with an optional A-ToMe step after the
/// attention residual. `merge` may be empty for non-merge layers.
LayerOutput encoder_layer(const TokenSequence& seq, const TransformerLayerWeights& w,
                          const EncoderConfig& cfg, std::size_t layer_idx,
                          const MergeStep& merge = {}, bool record_keys = false);

struct EncodeOptions {
    bool record_keys = false;
};

struct EncodeResult {
    TokenSequence tokens;
    MergeTrace trace;
    std::vector<LayerStats> layers;
    std::size_t frontend_tokens = 0;

    double merged_fraction() const;
    double mean_token_ms() const;
};

EncodeResult encode(const FeatureSequence& features, const EncoderWeights& w,
                    const EncoderConfig& cfg, const EncodeOptions& opts = {});

// Encoder forward with a caller-supplied merge hook at the configured merge layers.
EncodeResult encode_with(const FeatureSequence& features, const EncoderWeights& w,
                         const EncoderConfig& cfg, const MergeStep& merge,
                         const EncodeOptions& opts = {});

// Mean adjacent key cosine per layer; nullopt where a layer saw fewer than two tokens.
std::vector<std::optional<double>> similarity_profile(const EncodeResult& result);
std::vector<std::optional<double>> similarity_profile(
    std::span<const std::vector<double>> per_layer_similarities);

}  // namespace atome
