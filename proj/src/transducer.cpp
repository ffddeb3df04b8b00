#include "atome/transducer.hpp"

#include <algorithm>
#include <cmath>

#include "atome/error.hpp"
#include "atome/rng.hpp"

namespace atome {

void JointConfig::validate() const {
    if (vocab_size < 2) throw InputError("vocab_size must be >= 2");
    if (blank >= vocab_size) throw InputError("blank id outside vocabulary");
    if (d_joint == 0 || d_pred == 0 || d_enc == 0) throw InputError("transducer widths must be >= 1");
}

namespace {

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (float& v : m.data()) v = static_cast<float>(rng.uniform(-scale, scale));
    return m;
}

double fan_in_scale(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

TransducerWeights zero_transducer(const JointConfig& cfg) {
    cfg.validate();
    TransducerWeights w;
    w.pred.embed = Matrix(cfg.vocab_size, cfg.d_pred);
    w.pred.w_in = Matrix(cfg.d_pred, cfg.d_pred);
    w.pred.w_rec = Matrix(cfg.d_pred, cfg.d_pred);
    w.pred.bias.assign(cfg.d_pred, 0.0f);
    w.joint.enc_proj = Matrix(cfg.d_enc, cfg.d_joint);
    w.joint.enc_bias.assign(cfg.d_joint, 0.0f);
    w.joint.pred_proj = Matrix(cfg.d_pred, cfg.d_joint);
    w.joint.pred_bias.assign(cfg.d_joint, 0.0f);
    w.joint.out = Matrix(cfg.d_joint, cfg.vocab_size);
    w.joint.out_bias.assign(cfg.vocab_size, 0.0f);
    return w;
}

TransducerWeights init_transducer(const JointConfig& cfg, std::uint64_t seed) {
    TransducerWeights w = zero_transducer(cfg);
    Rng rng(seed);
    w.pred.embed = uniform_matrix(rng, cfg.vocab_size, cfg.d_pred, 1.0);
    w.pred.w_in = uniform_matrix(rng, cfg.d_pred, cfg.d_pred, fan_in_scale(cfg.d_pred));
    w.pred.w_rec = uniform_matrix(rng, cfg.d_pred, cfg.d_pred, fan_in_scale(cfg.d_pred));
    w.joint.enc_proj = uniform_matrix(rng, cfg.d_enc, cfg.d_joint, fan_in_scale(cfg.d_enc));
    w.joint.pred_proj = uniform_matrix(rng, cfg.d_pred, cfg.d_joint, fan_in_scale(cfg.d_pred));
    w.joint.out = uniform_matrix(rng, cfg.d_joint, cfg.vocab_size, fan_in_scale(cfg.d_joint));
    return w;
}

void rig_all_blank(TransducerWeights& w, const JointConfig& cfg) {
    cfg.validate();
    w.joint.out = Matrix(cfg.d_joint, cfg.vocab_size);
    w.joint.out_bias.assign(cfg.vocab_size, 0.0f);
    w.joint.out_bias[cfg.blank] = 20.0f;
}

PredictionState initial_state(const JointConfig& cfg) {
    PredictionState s;
    s.hidden.assign(cfg.d_pred, 0.0f);
    s.last_symbol = cfg.blank;
    return s;
}

std::pair<Vector, PredictionState> predict_step(const PredictionState& state, std::size_t symbol,
                                                const PredictionWeights& w, const JointConfig& cfg) {
    if (symbol >= cfg.vocab_size) {
        throw InputError("predict_step: symbol " + std::to_string(symbol) + " outside vocabulary of " +
                         std::to_string(cfg.vocab_size));
    }
    if (state.hidden.size() != cfg.d_pred) throw InputError("predict_step: hidden state width mismatch");
    Vector pre = affine(w.embed.row(symbol), w.w_in, w.bias);
    const Vector rec = affine(state.hidden, w.w_rec, {});
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = std::tanh(pre[i] + rec[i]);
    PredictionState next{pre, symbol};
    return {std::move(pre), std::move(next)};
}

Vector joint_step(std::span<const float> h, std::span<const float> z, const JointWeights& w) {
    Vector a = affine(h, w.enc_proj, w.enc_bias);
    const Vector b = affine(z, w.pred_proj, w.pred_bias);
    if (a.size() != b.size()) throw InputError("joint_step: projection widths differ");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::tanh(a[i] + b[i]);
    Vector logits = affine(a, w.out, w.out_bias);
    softmax_inplace(logits);
    return logits;
}

DecodeResult greedy_decode(const TokenSequence& enc, const TransducerWeights& w, const JointConfig& cfg,
                           std::size_t max_symbols_per_token) {
    cfg.validate();
    if (enc.size() == 0) throw InputError("greedy_decode: empty encoder output");
    if (enc.embeddings.cols() != cfg.d_enc) {
        throw InputError("greedy_decode: encoder width " + std::to_string(enc.embeddings.cols()) +
                         " != d_enc " + std::to_string(cfg.d_enc));
    }
    DecodeResult r;
    r.T = enc.size();
    r.per_token_emissions.assign(r.T, 0);
    auto [z, state] = predict_step(initial_state(cfg), cfg.blank, w.pred, cfg);
    for (std::size_t t = 0; t < r.T; ++t) {
        const auto h = enc.embeddings.row(t);
        for (;;) {
            const Vector probs = joint_step(h, z, w.joint);
            ++r.steps;
            const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
            if (best == cfg.blank || r.per_token_emissions[t] >= max_symbols_per_token) break;
            r.symbols.push_back(best);
            ++r.per_token_emissions[t];
            std::tie(z, state) = predict_step(state, best, w.pred, cfg);
        }
    }
    r.U = r.symbols.size();
    return r;
}

}  // namespace atome
