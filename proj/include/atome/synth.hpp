#pragma once

#include <cstddef>
#include <cstdint>

#include "atome/encoder.hpp"

namespace atome {

/// AR(1) pseudo-random frames:
///   frame_0 = noise_0,  frame_t = rho * frame_{t-1} + sqrt(1 - rho^2) * noise_t
/// with i.i.d. standard normal noise, so every frame has unit variance per
/// dimension and adjacent frames correlate at about rho.
FeatureSequence synth_features(std::size_t n_frames, std::size_t n_mels, double correlation,
                               std::uint64_t seed, double stride_ms = 10.0);

}  // namespace atome
