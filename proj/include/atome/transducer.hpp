#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "atome/linalg.hpp"
#include "atome/merge.hpp"

namespace atome {

enum class CellType { Tanh };

struct JointConfig {
    std::size_t vocab_size = 32;
    std::size_t d_joint = 64;
    std::size_t d_pred = 64;
    std::size_t d_enc = 64;  // encoder output width
    std::size_t blank = 0;
    CellType cell = CellType::Tanh;

    void validate() const;
};

struct PredictionWeights {
    Matrix embed;    // vocab x d_pred
    Matrix w_in;     // d_pred x d_pred
    Matrix w_rec;    // d_pred x d_pred
    Vector bias;     // d_pred
};

struct JointWeights {
    Matrix enc_proj;   // d_enc x d_joint
    Vector enc_bias;
    Matrix pred_proj;  // d_pred x d_joint
    Vector pred_bias;
    Matrix out;        // d_joint x vocab
    Vector out_bias;
};

struct TransducerWeights {
    PredictionWeights pred;
    JointWeights joint;
};

TransducerWeights init_transducer(const JointConfig& cfg, std::uint64_t seed);
TransducerWeights zero_transducer(const JointConfig& cfg);

// Makes the joint emit blank with probability ~1 regardless of its inputs:
// zero output projection and a large blank bias.
void rig_all_blank(TransducerWeights& w, const JointConfig& cfg);

struct PredictionState {
    Vector hidden;
    std::size_t last_symbol = 0;
};

PredictionState initial_state(const JointConfig& cfg);

/// One recurrent update:  h' = tanh(W_in^T E[symbol] + W_rec^T h + b).
/// Returns (h', new state); the embedding fed to the joint is h'.
std::pair<Vector, PredictionState> predict_step(const PredictionState& state, std::size_t symbol,
                                                const PredictionWeights& w, const JointConfig& cfg);

/// softmax(W_out^T tanh(W_enc^T h + b_enc + W_pred^T z + b_pred) + b_out)
Vector joint_step(std::span<const float> h, std::span<const float> z, const JointWeights& w);

struct DecodeResult {
    std::vector<std::size_t> symbols;
    std::size_t steps = 0;  // joint evaluations
    std::size_t T = 0;
    std::size_t U = 0;
    std::vector<std::size_t> per_token_emissions;
};

/// Greedy transducer search. Each encoder token is evaluated until the joint
/// picks blank or `max_symbols_per_token` symbols were emitted there; the
/// evaluation that ends a token always advances, so steps == T + U.
DecodeResult greedy_decode(const TokenSequence& enc, const TransducerWeights& w, const JointConfig& cfg,
                           std::size_t max_symbols_per_token = 4);

}  // namespace atome
