#include "scpl/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace scpl {

std::size_t BitMask::popcount() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void write_pnm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::size_t channels, std::span<const std::uint8_t> pixels) {
  if (channels != 1 && channels != 3) throw IoError("pnm supports 1 or 3 channels");
  if (pixels.size() != width * height * channels)
    throw IoError("pnm pixel count does not match " + std::to_string(width) + "x" +
                  std::to_string(height) + "x" + std::to_string(channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << (channels == 1 ? "P5" : "P6") << "\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic;
  PnmImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  in.get();
  if (!in || (magic != "P5" && magic != "P6") || maxval != 255)
    throw IoError("'" + path.string() + "' is not an 8-bit binary PGM/PPM");
  img.channels = magic == "P5" ? 1 : 3;
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw IoError("'" + path.string() + "' is truncated");
  return img;
}

void write_gradmap_pgm(const std::filesystem::path& path, const GradMap& map) {
  std::vector<std::uint8_t> px(map.size(), 0);
  if (!map.values.empty()) {
    const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
    const double range = *hi - *lo;
    if (range > 0)
      for (std::size_t i = 0; i < map.size(); ++i)
        px[i] = static_cast<std::uint8_t>(std::lround(255.0 * (map.values[i] - *lo) / range));
  }
  write_pnm(path, map.width, map.height, 1, px);
}

void write_mask_pgm(const std::filesystem::path& path, const BitMask& mask) {
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) px[i] = mask.bits[i] ? 255 : 0;
  write_pnm(path, mask.width, mask.height, 1, px);
}

}  // namespace scpl
