#include "atome/synth.hpp"

#include <cmath>

#include "atome/error.hpp"
#include "atome/rng.hpp"

namespace atome {

FeatureSequence synth_features(std::size_t n_frames, std::size_t n_mels, double correlation,
                               std::uint64_t seed, double stride_ms) {
    if (n_frames == 0 || n_mels == 0) throw InputError("synth_features: need at least one frame and one mel");
    if (!(correlation >= 0.0 && correlation < 1.0)) {
        throw InputError("synth_features: correlation must lie in [0, 1)");
    }
    Rng rng(seed);
    const double innovation = std::sqrt(1.0 - correlation * correlation);
    FeatureSequence f;
    f.stride_ms = stride_ms;
    f.frames = Matrix(n_frames, n_mels);
    std::vector<double> state(n_mels);
    for (auto& s : state) s = rng.normal();
    for (std::size_t t = 0; t < n_frames; ++t) {
        if (t > 0) {
            for (auto& s : state) s = correlation * s + innovation * rng.normal();
        }
        auto row = f.frames.row(t);
        for (std::size_t m = 0; m < n_mels; ++m) row[m] = static_cast<float>(state[m]);
    }
    return f;
}

}  // namespace atome
