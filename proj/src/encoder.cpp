#include "atome/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "atome/error.hpp"
#include "atome/rng.hpp"

namespace atome {

EncoderConfig EncoderConfig::toy() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::toy18() {
    EncoderConfig cfg;
    cfg.n_layers = 18;
    cfg.merge_layers = every_third(18);
    return cfg;
}

EncoderConfig EncoderConfig::full() {
    EncoderConfig cfg = toy18();
    cfg.d_model = 512;
    cfg.n_heads = 8;
    cfg.d_ffn = 2048;
    return cfg;
}

EncoderConfig EncoderConfig::preset(const std::string& name) {
    if (name == "toy") return toy();
    if (name == "toy18") return toy18();
    if (name == "full") return full();
    throw UsageError("unknown preset '" + name + "' (expected toy|toy18|full)");
}

std::vector<std::size_t> EncoderConfig::every_third(std::size_t n_layers) {
    std::vector<std::size_t> out;
    for (std::size_t l = 2; l < n_layers; l += 3) out.push_back(l);
    return out;
}

bool EncoderConfig::is_merge_layer(std::size_t layer) const {
    return std::find(merge_layers.begin(), merge_layers.end(), layer) != merge_layers.end();
}

void EncoderConfig::validate() const {
    if (n_layers == 0) throw InputError("n_layers must be >= 1");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
        throw InputError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_heads (" +
                         std::to_string(n_heads) + ")");
    }
    if (d_ffn == 0) throw InputError("d_ffn must be >= 1");
    if (frontend_factor == 0) throw InputError("frontend_factor must be >= 1");
    if (n_mels == 0) throw InputError("n_mels must be >= 1");
    for (std::size_t l : merge_layers) {
        if (l >= n_layers) {
            throw InputError("merge layer " + std::to_string(l) + " outside [0, " + std::to_string(n_layers) + ")");
        }
    }
    if (!(ln_eps > 0.0f)) throw InputError("ln_eps must be > 0");
    policy.validate();
}

namespace {

std::size_t parse_count(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        throw FormatError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    if (pos != v.size()) throw FormatError("config key '" + key + "': trailing characters in '" + v + "'");
    return static_cast<std::size_t>(x);
}

double parse_real(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw FormatError("config key '" + key + "': expected a number, got '" + v + "'");
    }
    if (pos != v.size()) throw FormatError("config key '" + key + "': trailing characters in '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw FormatError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<std::size_t> parse_count_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        if (item.empty()) continue;
        out.push_back(parse_count(key, item));
    }
    return out;
}

std::string format_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

const std::vector<std::string>& encoder_config_keys() {
    static const std::vector<std::string> keys = {
        "n_layers", "merge_layers", "d_model",   "n_heads",       "d_ffn",
        "frontend_factor", "n_mels", "policy",   "ratio",         "threshold",
        "selector", "weighted_mean", "rng_seed", "positional_encoding", "ln_eps"};
    return keys;
}

void apply_config_values(EncoderConfig& cfg, const KeyValues& kv) {
    // "preset" first so the remaining keys override it.
    if (auto it = kv.find("preset"); it != kv.end()) cfg = EncoderConfig::preset(it->second);
    bool layers_changed = false;
    bool merge_given = false;
    for (const auto& [key, value] : kv) {
        if (key == "preset") continue;
        if (key == "n_layers") {
            cfg.n_layers = parse_count(key, value);
            layers_changed = true;
        } else if (key == "merge_layers") {
            cfg.merge_layers = parse_count_list(key, value);
            merge_given = true;
        } else if (key == "d_model") {
            cfg.d_model = parse_count(key, value);
        } else if (key == "n_heads") {
            cfg.n_heads = parse_count(key, value);
        } else if (key == "d_ffn") {
            cfg.d_ffn = parse_count(key, value);
        } else if (key == "frontend_factor") {
            cfg.frontend_factor = parse_count(key, value);
        } else if (key == "n_mels") {
            cfg.n_mels = parse_count(key, value);
        } else if (key == "policy") {
            cfg.policy.kind = parse_policy_kind(value);
        } else if (key == "ratio") {
            cfg.policy.ratio = parse_real(key, value);
        } else if (key == "threshold") {
            cfg.policy.threshold = parse_real(key, value);
        } else if (key == "selector") {
            cfg.policy.selector = parse_selector(value);
        } else if (key == "weighted_mean") {
            cfg.policy.weighted_mean = parse_bool(key, value);
        } else if (key == "rng_seed") {
            cfg.rng_seed = parse_count(key, value);
        } else if (key == "positional_encoding") {
            cfg.positional_encoding = parse_bool(key, value);
        } else if (key == "ln_eps") {
            cfg.ln_eps = static_cast<float>(parse_real(key, value));
        } else {
            throw FormatError("unknown config key '" + key + "'");
        }
    }
    if (layers_changed && !merge_given) cfg.merge_layers = EncoderConfig::every_third(cfg.n_layers);
    cfg.validate();
}

EncoderConfig load_encoder_config(const std::filesystem::path& path, EncoderConfig base) {
    apply_config_values(base, read_key_values(path));
    return base;
}

KeyValues to_key_values(const EncoderConfig& cfg) {
    std::string layers;
    for (std::size_t i = 0; i < cfg.merge_layers.size(); ++i) {
        if (i) layers += ',';
        layers += std::to_string(cfg.merge_layers[i]);
    }
    return {{"n_layers", std::to_string(cfg.n_layers)},
            {"merge_layers", layers},
            {"d_model", std::to_string(cfg.d_model)},
            {"n_heads", std::to_string(cfg.n_heads)},
            {"d_ffn", std::to_string(cfg.d_ffn)},
            {"frontend_factor", std::to_string(cfg.frontend_factor)},
            {"n_mels", std::to_string(cfg.n_mels)},
            {"policy", to_string(cfg.policy.kind)},
            {"ratio", format_real(cfg.policy.ratio)},
            {"threshold", format_real(cfg.policy.threshold)},
            {"selector", to_string(cfg.policy.selector)},
            {"weighted_mean", cfg.policy.weighted_mean ? "true" : "false"},
            {"rng_seed", std::to_string(cfg.rng_seed)},
            {"positional_encoding", cfg.positional_encoding ? "true" : "false"},
            {"ln_eps", format_real(cfg.ln_eps)}};
}

void write_features(const std::filesystem::path& path, const FeatureSequence& f) {
    write_atmx(path, f.frames);
    write_key_values(path.string() + ".meta", {{"stride_ms", format_real(f.stride_ms)}});
}

FeatureSequence read_features(const std::filesystem::path& path) {
    FeatureSequence f;
    f.frames = read_atmx(path);
    const std::filesystem::path meta = path.string() + ".meta";
    if (std::filesystem::exists(meta)) {
        const auto kv = read_key_values(meta);
        if (auto it = kv.find("stride_ms"); it != kv.end()) {
            f.stride_ms = parse_real("stride_ms", it->second);
            if (!(f.stride_ms > 0.0)) throw FormatError(meta.string() + ": stride_ms must be > 0");
        }
    }
    return f;
}

bool operator==(const EncoderWeights& a, const EncoderWeights& b) {
    if (!(a.frontend_w == b.frontend_w) || a.frontend_b != b.frontend_b) return false;
    if (a.final_gain != b.final_gain || a.final_bias != b.final_bias) return false;
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const auto& x = a.layers[i];
        const auto& y = b.layers[i];
        if (!(x.wq == y.wq && x.wk == y.wk && x.wv == y.wv && x.wo == y.wo && x.w1 == y.w1 && x.w2 == y.w2)) {
            return false;
        }
        if (x.bq != y.bq || x.bk != y.bk || x.bv != y.bv || x.bo != y.bo || x.b1 != y.b1 || x.b2 != y.b2 ||
            x.ln1_gain != y.ln1_gain || x.ln1_bias != y.ln1_bias || x.ln2_gain != y.ln2_gain ||
            x.ln2_bias != y.ln2_bias) {
            return false;
        }
    }
    return true;
}

namespace {

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
    Matrix m(rows, cols);
    for (float& v : m.data()) v = static_cast<float>(rng.uniform(-scale, scale));
    return m;
}

}  // namespace

EncoderWeights init_weights(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const std::size_t d = cfg.d_model;
    EncoderWeights w;
    w.frontend_w = uniform_matrix(rng, cfg.frontend_factor * cfg.n_mels, d);
    w.frontend_b.assign(d, 0.0f);
    w.layers.resize(cfg.n_layers);
    for (auto& l : w.layers) {
        l.ln1_gain.assign(d, 1.0f);
        l.ln1_bias.assign(d, 0.0f);
        l.wq = uniform_matrix(rng, d, d);
        l.wk = uniform_matrix(rng, d, d);
        l.wv = uniform_matrix(rng, d, d);
        l.wo = uniform_matrix(rng, d, d);
        l.bq.assign(d, 0.0f);
        l.bk.assign(d, 0.0f);
        l.bv.assign(d, 0.0f);
        l.bo.assign(d, 0.0f);
        l.ln2_gain.assign(d, 1.0f);
        l.ln2_bias.assign(d, 0.0f);
        l.w1 = uniform_matrix(rng, d, cfg.d_ffn);
        l.b1.assign(cfg.d_ffn, 0.0f);
        l.w2 = uniform_matrix(rng, cfg.d_ffn, d);
        l.b2.assign(d, 0.0f);
    }
    w.final_gain.assign(d, 1.0f);
    w.final_bias.assign(d, 0.0f);
    return w;
}

TokenSequence frontend(const FeatureSequence& features, const EncoderConfig& cfg, const EncoderWeights& w) {
    const std::size_t factor = cfg.frontend_factor;
    if (features.n_frames() < factor) {
        throw InputError("frontend: " + std::to_string(features.n_frames()) + " frames is shorter than factor " +
                         std::to_string(factor));
    }
    if (features.n_mels() != cfg.n_mels) {
        throw InputError("frontend: features have " + std::to_string(features.n_mels()) + " mels, config expects " +
                         std::to_string(cfg.n_mels));
    }
    const std::size_t n_tok = features.n_frames() / factor;
    const std::size_t width = factor * cfg.n_mels;
    // Row-major storage makes rows [factor*t, factor*t + factor) one stacked row.
    const auto src = features.frames.data();
    Matrix stacked(n_tok, width, std::vector<float>(src.begin(), src.begin() + n_tok * width));

    TokenSequence seq;
    seq.embeddings = affine(stacked, w.frontend_w, w.frontend_b);
    seq.frame_ms = features.stride_ms;
    seq.spans.reserve(n_tok);
    for (std::size_t t = 0; t < n_tok; ++t) {
        seq.spans.push_back({static_cast<std::uint32_t>(t * factor), static_cast<std::uint32_t>(factor)});
    }
    if (cfg.positional_encoding) {
        const std::size_t d = cfg.d_model;
        for (std::size_t t = 0; t < n_tok; ++t) {
            auto row = seq.embeddings.row(t);
            for (std::size_t i = 0; i < d; ++i) {
                const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
                const double angle = static_cast<double>(t) * freq;
                row[i] += static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
            }
        }
    }
    return seq;
}

std::optional<double> LayerStats::mean_similarity() const {
    if (similarities.empty()) return std::nullopt;
    double total = 0.0;
    for (double s : similarities) total += s;
    return total / static_cast<double>(similarities.size());
}

MergeStep policy_merge_step(const MergePolicy& policy) {
    return [policy](const TokenSequence& tokens, const Matrix&, std::span<const double> scores, std::size_t layer) {
        auto outcome = apply_policy_scored(tokens, scores, policy, layer);
        return std::pair{std::move(outcome.tokens), std::vector<TraceEntry>{std::move(outcome.entry)}};
    };
}

namespace {

// Logits for one query against all keys of one head:
//   out[j] = sum_c q[c] * kt[c * n + j]
// summed over c in ascending order. Blocks of 8 keys keep the accumulators
// in registers.
void head_logits(const double* q, const float* kt, std::size_t dh, std::size_t n, double* out) {
    constexpr std::size_t B = 8;
    std::size_t j = 0;
    for (; j + B <= n; j += B) {
        double acc[B] = {};
        for (std::size_t c = 0; c < dh; ++c) {
            const double qc = q[c];
            const float* kr = kt + c * n + j;
            for (std::size_t b = 0; b < B; ++b) acc[b] += qc * static_cast<double>(kr[b]);
        }
        for (std::size_t b = 0; b < B; ++b) out[j + b] = acc[b];
    }
    for (; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += q[c] * static_cast<double>(kt[c * n + j]);
        out[j] = acc;
    }
}

// out[c] = sum_j p[j] * v[j * DH + c], j ascending.
template <std::size_t DH>
void weighted_values(const float* p, const float* v, std::size_t n, double* out) {
    double acc[DH] = {};
    for (std::size_t j = 0; j < n; ++j) {
        const double pj = p[j];
        const float* vr = v + j * DH;
        for (std::size_t c = 0; c < DH; ++c) acc[c] += pj * static_cast<double>(vr[c]);
    }
    for (std::size_t c = 0; c < DH; ++c) out[c] = acc[c];
}

void weighted_values(const float* p, const float* v, std::size_t n, std::size_t dh, double* out) {
    switch (dh) {
        case 16: return weighted_values<16>(p, v, n, out);
        case 32: return weighted_values<32>(p, v, n, out);
        case 64: return weighted_values<64>(p, v, n, out);
        default: break;
    }
    std::fill(out, out + dh, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double pj = p[j];
        for (std::size_t c = 0; c < dh; ++c) out[c] += pj * static_cast<double>(v[j * dh + c]);
    }
}

// Full (unmasked) multi-head attention, one query row at a time so memory
// stays O(n). Returns the concatenated per-head contexts.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads, double& row_error) {
    const std::size_t n = q.rows();
    const std::size_t d = q.cols();
    const std::size_t dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix ctx(n, d);
    std::vector<float> kt(dh * n);  // head keys, transposed
    std::vector<float> vh(n * dh);  // head values
    std::vector<double> logits(n);
    std::vector<float> probs(n);
    std::vector<double> qs(dh);
    std::vector<double> acc(dh);
    row_error = 0.0;
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t c = 0; c < dh; ++c) {
                kt[c * n + j] = k(j, off + c);
                vh[j * dh + c] = v(j, off + c);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < dh; ++c) qs[c] = static_cast<double>(q(i, off + c)) * scale;
            head_logits(qs.data(), kt.data(), dh, n, logits.data());
            const double mx = *std::max_element(logits.begin(), logits.end());
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const float e = std::exp(static_cast<float>(logits[j] - mx));
                probs[j] = e;
                total += e;
            }
            const float inv = static_cast<float>(1.0 / total);
            double row_sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                probs[j] *= inv;
                row_sum += probs[j];
            }
            row_error = std::max(row_error, std::abs(row_sum - 1.0));
            weighted_values(probs.data(), vh.data(), n, dh, acc.data());
            auto out = ctx.row(i);
            for (std::size_t c = 0; c < dh; ++c) out[off + c] = static_cast<float>(acc[c]);
        }
    }
    return ctx;
}

}  // namespace

LayerOutput encoder_layer(const TokenSequence& seq, const TransformerLayerWeights& w, const EncoderConfig& cfg,
                          std::size_t layer_idx, const MergeStep& merge, bool record_keys) {
    if (seq.size() == 0) throw InputError("encoder_layer: empty token sequence");
    if (seq.embeddings.cols() != cfg.d_model) {
        throw InputError("encoder_layer: token width " + std::to_string(seq.embeddings.cols()) + " != d_model " +
                         std::to_string(cfg.d_model));
    }
    LayerOutput out;
    out.stats.layer = layer_idx;
    out.stats.n_in = seq.size();

    const Matrix xn = layer_norm_rows(seq.embeddings, w.ln1_gain, w.ln1_bias, cfg.ln_eps);
    const Matrix q = affine(xn, w.wq, w.bq);
    Matrix keys = affine(xn, w.wk, w.bk);
    const Matrix v = affine(xn, w.wv, w.bv);
    const Matrix ctx = attention(q, keys, v, cfg.n_heads, out.stats.attention_row_error);

    TokenSequence tokens;
    tokens.frame_ms = seq.frame_ms;
    tokens.spans = seq.spans;
    tokens.embeddings = seq.embeddings;
    add_inplace(tokens.embeddings, affine(ctx, w.wo, w.bo));

    out.stats.similarities = adjacent_similarities(keys);
    if (merge && cfg.is_merge_layer(layer_idx)) {
        auto [merged, entries] = merge(tokens, keys, out.stats.similarities, layer_idx);
        tokens = std::move(merged);
        out.entries = std::move(entries);
    }

    const Matrix hn = layer_norm_rows(tokens.embeddings, w.ln2_gain, w.ln2_bias, cfg.ln_eps);
    Matrix hidden = affine(hn, w.w1, w.b1);
    for (float& x : hidden.data()) x = std::max(x, 0.0f);
    add_inplace(tokens.embeddings, affine(hidden, w.w2, w.b2));

    out.stats.n_out = tokens.size();
    if (record_keys) out.stats.keys = std::move(keys);
    out.tokens = std::move(tokens);
    return out;
}

double EncodeResult::merged_fraction() const {
    if (frontend_tokens == 0) return 0.0;
    return 1.0 - static_cast<double>(tokens.size()) / static_cast<double>(frontend_tokens);
}

double EncodeResult::mean_token_ms() const {
    if (tokens.size() == 0) return 0.0;
    return static_cast<double>(tokens.total_frames()) * tokens.frame_ms / static_cast<double>(tokens.size());
}

EncodeResult encode_with(const FeatureSequence& features, const EncoderWeights& w, const EncoderConfig& cfg,
                         const MergeStep& merge, const EncodeOptions& opts) {
    cfg.validate();
    if (w.layers.size() != cfg.n_layers) {
        throw InputError("encode: weights have " + std::to_string(w.layers.size()) + " layers, config " +
                         std::to_string(cfg.n_layers));
    }
    EncodeResult result;
    TokenSequence tokens = frontend(features, cfg, w);
    result.frontend_tokens = tokens.size();
    result.layers.reserve(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        auto layer = encoder_layer(tokens, w.layers[l], cfg, l, merge, opts.record_keys);
        tokens = std::move(layer.tokens);
        for (auto& e : layer.entries) result.trace.entries.push_back(std::move(e));
        result.layers.push_back(std::move(layer.stats));
    }
    tokens.embeddings = layer_norm_rows(tokens.embeddings, w.final_gain, w.final_bias, cfg.ln_eps);
    result.tokens = std::move(tokens);
    return result;
}

EncodeResult encode(const FeatureSequence& features, const EncoderWeights& w, const EncoderConfig& cfg,
                    const EncodeOptions& opts) {
    return encode_with(features, w, cfg, policy_merge_step(cfg.policy), opts);
}

std::vector<std::optional<double>> similarity_profile(std::span<const std::vector<double>> per_layer) {
    std::vector<std::optional<double>> out;
    out.reserve(per_layer.size());
    for (const auto& sims : per_layer) {
        if (sims.empty()) {
            out.emplace_back();
            continue;
        }
        double total = 0.0;
        for (double s : sims) total += s;
        out.emplace_back(total / static_cast<double>(sims.size()));
    }
    return out;
}

std::vector<std::optional<double>> similarity_profile(const EncodeResult& result) {
    std::vector<std::optional<double>> out;
    out.reserve(result.layers.size());
    for (const auto& l : result.layers) out.push_back(l.mean_similarity());
    return out;
}

}  // namespace atome
