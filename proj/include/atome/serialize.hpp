#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atome/merge.hpp"
#include "atome/transducer.hpp"

namespace atome {

nlohmann::json to_json(const MergePolicy& p);
MergePolicy policy_from_json(const nlohmann::json& j);

// {layer, n_before, n_after, pairs: [{i, score}], policy[, budget][, segment]}
nlohmann::json to_json(const TraceEntry& e);
TraceEntry trace_entry_from_json(const nlohmann::json& j);

// One JSON object per line, one line per trace entry.
void write_trace_jsonl(std::ostream& out, const MergeTrace& trace);
MergeTrace read_trace_jsonl(std::istream& in);
void write_trace_jsonl(const std::filesystem::path& path, const MergeTrace& trace);

// {symbols, steps, T, U}
nlohmann::json to_json(const DecodeResult& r);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// Embeddings as ATMX at `path`; "<path>.spans" holds frame_ms on the first
// line, then "start_frame n_frames" per token.
void write_tokens(const std::filesystem::path& path, const TokenSequence& seq);
TokenSequence read_tokens(const std::filesystem::path& path);

}  // namespace atome
