#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scpl/tensor.hpp"

namespace scpl {

/// H x W binary mask. `rho` records the quantile it was produced with (0 for ground truth).
struct BitMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;
  double rho = 0.0;

  BitMask() = default;
  BitMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), bits(h * w, fill) {}

  std::size_t size() const { return bits.size(); }
  std::size_t popcount() const;
  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
  bool operator==(const BitMask& o) const {
    return height == o.height && width == o.width && bits == o.bits;
  }
};

enum class SaliencyMode { Vanilla, Guided };

/// Non-negative per-pixel attribution scores.
struct GradMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  SaliencyMode source_mode = SaliencyMode::Guided;

  std::size_t size() const { return values.size(); }
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary PGM (P5, channels == 1) or PPM (P6, channels == 3), 8-bit, row-major.
/// `pixels` is channel-interleaved for P6.
void write_pnm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::size_t channels, std::span<const std::uint8_t> pixels);

struct PnmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};
PnmImage read_pnm(const std::filesystem::path& path);

/// Scores min-max normalised to [0, 255] (all-equal maps become 0).
void write_gradmap_pgm(const std::filesystem::path& path, const GradMap& map);
/// 0 / 255.
void write_mask_pgm(const std::filesystem::path& path, const BitMask& mask);

}  // namespace scpl
