#pragma once

#include <string>
#include <vector>

#include "scpl/env.hpp"
#include "scpl/rng.hpp"

namespace scpl {

enum class AugmentKind { RandomConv, RandomOverlay };

AugmentKind parse_augment_kind(const std::string& name);
std::string augment_kind_name(AugmentKind kind);

struct AugmentConfig {
  AugmentKind kind = AugmentKind::RandomOverlay;
  double blend_alpha = 0.5;
  std::uint64_t texture_bank_seed = 0;
  std::size_t kernel_size = 3;
  std::size_t bank_size = 64;

  void validate() const;
};

/// Fixed set of frame-sized textures (channels x size x size, values in [0, 1]).
class TextureBank {
 public:
  /// Procedural bank cycling through value noise, stripes, checkerboards and blobs.
  TextureBank(std::size_t count, std::size_t channels, std::size_t size, std::uint64_t seed);
  /// Explicit textures, each `channels x tex_size x tex_size`; tiled or cropped on use.
  TextureBank(std::vector<std::vector<float>> textures, std::size_t channels, std::size_t tex_size);

  std::size_t size() const { return textures_.size(); }
  std::size_t channels() const { return channels_; }
  const std::vector<float>& texture(std::size_t i) const { return textures_.at(i); }
  /// Texture sample at (c, y, x) with wrap-around tiling.
  float sample(std::size_t i, std::size_t c, std::size_t y, std::size_t x) const;

 private:
  std::vector<std::vector<float>> textures_;
  std::size_t channels_;
  std::size_t tex_size_;
};

/// s_a = alpha * s + (1 - alpha) * t, one rng-chosen texture t for all three frames.
Observation random_overlay(const Observation& s, const TextureBank& bank, double alpha, Rng& rng);

/// Convolves every frame with one kernel [C_out = C, C_in = C, k, k] with entries
/// N(0, 1/k^2) (edge-replicated borders), then min-max normalises the whole stack.
Observation random_conv(const Observation& s, std::size_t kernel_size, Rng& rng);

/// random_conv with an explicit kernel laid out [c_out][c_in][ky][kx].
Observation convolve_and_normalize(const Observation& s, const std::vector<double>& kernel,
                                   std::size_t kernel_size);

/// Applies the configured augmentation.
class Augmenter {
 public:
  Augmenter(AugmentConfig config, std::size_t channels, std::size_t frame_size);
  Observation apply(const Observation& s, Rng& rng) const;
  const AugmentConfig& config() const { return config_; }
  const TextureBank& bank() const { return bank_; }

 private:
  AugmentConfig config_;
  TextureBank bank_;
};

}  // namespace scpl
