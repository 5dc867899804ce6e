#include "scpl/value_noise.hpp"

#include <algorithm>
#include <cmath>

#include "scpl/tensor.hpp"

namespace scpl {

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

std::vector<double> value_noise(std::size_t width, std::size_t height, std::size_t cell,
                                std::size_t octaves, Rng& rng) {
  if (width == 0 || height == 0 || cell == 0 || octaves == 0)
    throw Error("value_noise: empty geometry");
  std::vector<double> out(width * height, 0.0);
  double amplitude = 1.0, total = 0.0;
  std::size_t c = cell;
  for (std::size_t o = 0; o < octaves; ++o) {
    const std::size_t lw = std::max<std::size_t>(1, (width + c - 1) / c);
    const std::size_t lh = std::max<std::size_t>(1, (height + c - 1) / c);
    std::vector<double> lattice(lw * lh);
    for (auto& v : lattice) v = rng.uniform();
    for (std::size_t y = 0; y < height; ++y) {
      const double fy = static_cast<double>(y) / static_cast<double>(c);
      const std::size_t y0 = static_cast<std::size_t>(fy) % lh, y1 = (y0 + 1) % lh;
      const double ty = smoothstep(fy - std::floor(fy));
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = static_cast<double>(x) / static_cast<double>(c);
        const std::size_t x0 = static_cast<std::size_t>(fx) % lw, x1 = (x0 + 1) % lw;
        const double tx = smoothstep(fx - std::floor(fx));
        const double top = lattice[y0 * lw + x0] * (1 - tx) + lattice[y0 * lw + x1] * tx;
        const double bot = lattice[y1 * lw + x0] * (1 - tx) + lattice[y1 * lw + x1] * tx;
        out[y * width + x] += amplitude * (top * (1 - ty) + bot * ty);
      }
    }
    total += amplitude;
    amplitude *= 0.5;
    c = std::max<std::size_t>(1, c / 2);
  }
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace scpl
