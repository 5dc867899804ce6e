#pragma once

#include <vector>

#include "scpl/rng.hpp"

namespace scpl {

/// Tileable fractal value noise in [0, 1], row-major `height x width`.
///
/// Each octave draws a random lattice with `cell`-pixel spacing (halved per octave)
/// and interpolates it with smoothstep weights. The lattice wraps, so the texture
/// tiles seamlessly when width and height are multiples of `cell`.
std::vector<double> value_noise(std::size_t width, std::size_t height, std::size_t cell,
                                std::size_t octaves, Rng& rng);

}  // namespace scpl
