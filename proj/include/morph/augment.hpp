#pragma once

#include <array>

#include "morph/common.hpp"
#include "morph/rng.hpp"

namespace morph::aug {

// The 24 proper rotations of the cube group, as row-major 3x3 matrices with
// entries in {-1, 0, 1}.
const std::array<std::array<int, 9>, 24>& cube_rotations();

// Applies one of the 24 cube-group rotations, chosen uniformly.
CloudF rotate24(const CloudF& cloud, Rng& rng);

// Uniform global scale in [0.8, 1.25] plus per-point Gaussian jitter
// (sigma 0.01, clipped to +/-0.05).
CloudF scale_jitter(const CloudF& cloud, Rng& rng);

}  // namespace morph::aug
