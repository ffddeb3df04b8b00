#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "atome/encoder.hpp"

namespace atome {

struct SweepSpec {
    PolicyKind kind = PolicyKind::FixedRatio;
    Selector selector = Selector::GreedyScore;
    std::vector<double> grid;                      // ratios or thresholds
    std::vector<std::size_t> utterance_frames = {4000};
    std::size_t repetitions = 1;
    std::uint64_t seed = 0;
    double correlation = 0.9;
    bool timing = false;  // timing rows need repetitions >= 3
    std::string label;    // config column prefix; defaults to the policy kind

    void validate() const;
};

// Token-length histogram buckets in multiples of the frontend token length
// (40 ms at the default 10 ms stride): 1x, 2x, 3x, 4x, 5x and longer.
inline constexpr std::size_t kLengthBuckets = 5;

struct ReportRow {
    std::string config;
    PolicyKind kind = PolicyKind::FixedRatio;
    Selector selector = Selector::GreedyScore;
    double value = 0.0;
    std::size_t utterances = 0;
    std::size_t frontend_tokens = 0;
    std::size_t output_tokens = 0;
    double merged_pct = 0.0;
    double mean_token_ms = 0.0;
    std::array<std::size_t, kLengthBuckets> length_hist{};
    std::vector<double> layer_similarity;       // every layer; NaN where undefined
    std::vector<double> layer_merge_ratio;      // merge layers: pairs / tokens in
    std::vector<double> layer_merge_threshold;  // merge layers: lowest merged score, NaN if none
    std::size_t repetitions = 0;
    std::optional<double> encoder_ms;           // median, only when timed
    std::size_t decode_steps = 0;
    std::uint64_t seed = 0;
};

struct Report {
    std::vector<ReportRow> rows;
};

const std::vector<std::string>& report_columns();

/// Encodes the synthetic utterances of `spec` at every grid point with one
/// fixed set of weights (cfg.rng_seed) and aggregates token statistics.
Report run_sweep(const SweepSpec& spec, const EncoderConfig& cfg);

// Threshold sweep on fixed weights (merged fraction per evaluation threshold).
Report run_ondemand(std::vector<double> thresholds, SweepSpec spec, const EncoderConfig& cfg);

// RFC 4180 CSV with the fixed header from report_columns().
void write_report_csv(std::ostream& out, const Report& report);
Report read_report_csv(std::istream& in);

// RFC 4180 helpers.
std::string csv_escape(const std::string& field);
std::vector<std::vector<std::string>> parse_csv(std::istream& in);

std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace atome
