#include "scpl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "scpl/value_noise.hpp"

namespace scpl {

AugmentKind parse_augment_kind(const std::string& name) {
  if (name == "random_overlay" || name == "overlay") return AugmentKind::RandomOverlay;
  if (name == "random_conv" || name == "conv") return AugmentKind::RandomConv;
  throw Error("unknown augmentation '" + name + "'");
}

std::string augment_kind_name(AugmentKind kind) {
  return kind == AugmentKind::RandomOverlay ? "random_overlay" : "random_conv";
}

void AugmentConfig::validate() const {
  if (!(blend_alpha > 0.0 && blend_alpha <= 1.0)) throw Error("blend_alpha must lie in (0, 1]");
  if (kernel_size % 2 == 0) throw Error("random_conv kernel_size must be odd");
  if (bank_size == 0) throw Error("texture bank must not be empty");
}

namespace {

std::vector<float> make_texture(std::size_t kind, std::size_t channels, std::size_t n, Rng& rng) {
  std::vector<float> tex(channels * n * n);
  const double nd = static_cast<double>(n);
  switch (kind % 4) {
    case 0: {  // value noise, one layer per channel
      const std::size_t cell = std::max<std::size_t>(2, n / (2 + rng.uniform_int(6)));
      for (std::size_t c = 0; c < channels; ++c) {
        auto layer = value_noise(n, n, cell, 3, rng);
        for (std::size_t i = 0; i < n * n; ++i) tex[c * n * n + i] = static_cast<float>(layer[i]);
      }
      break;
    }
    case 1: {  // oriented stripes
      const double angle = rng.uniform(0, std::numbers::pi);
      const double freq = rng.uniform(2.0, 8.0) * 2.0 * std::numbers::pi / nd;
      std::vector<double> lo(channels), hi(channels);
      for (std::size_t c = 0; c < channels; ++c) {
        lo[c] = rng.uniform(0, 0.5);
        hi[c] = rng.uniform(0.5, 1.0);
      }
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const double t = 0.5 + 0.5 * std::sin(freq * (std::cos(angle) * x + std::sin(angle) * y));
          for (std::size_t c = 0; c < channels; ++c)
            tex[(c * n + y) * n + x] = static_cast<float>(lo[c] + (hi[c] - lo[c]) * t);
        }
      break;
    }
    case 2: {  // checkerboard
      const std::size_t cell = 2 + rng.uniform_int(std::max<std::size_t>(1, n / 4));
      std::vector<double> a(channels), b(channels);
      for (std::size_t c = 0; c < channels; ++c) {
        a[c] = rng.uniform();
        b[c] = rng.uniform();
      }
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          const bool odd = ((x / cell) + (y / cell)) % 2 == 1;
          for (std::size_t c = 0; c < channels; ++c)
            tex[(c * n + y) * n + x] = static_cast<float>(odd ? a[c] : b[c]);
        }
      break;
    }
    default: {  // gaussian blobs over a flat base
      std::vector<double> base(channels);
      for (auto& v : base) v = rng.uniform(0, 0.6);
      std::vector<double> acc(channels * n * n);
      for (std::size_t c = 0; c < channels; ++c)
        std::fill(acc.begin() + c * n * n, acc.begin() + (c + 1) * n * n, base[c]);
      const std::size_t blobs = 3 + rng.uniform_int(6);
      for (std::size_t k = 0; k < blobs; ++k) {
        const double cx = rng.uniform(0, nd), cy = rng.uniform(0, nd);
        const double r = rng.uniform(nd / 12, nd / 4);
        std::vector<double> amp(channels);
        for (auto& v : amp) v = rng.uniform(-0.5, 0.8);
        for (std::size_t y = 0; y < n; ++y)
          for (std::size_t x = 0; x < n; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double w = std::exp(-d2 / (2 * r * r));
            for (std::size_t c = 0; c < channels; ++c) acc[(c * n + y) * n + x] += amp[c] * w;
          }
      }
      for (std::size_t i = 0; i < acc.size(); ++i)
        tex[i] = static_cast<float>(std::clamp(acc[i], 0.0, 1.0));
      break;
    }
  }
  return tex;
}

}  // namespace

TextureBank::TextureBank(std::size_t count, std::size_t channels, std::size_t size,
                         std::uint64_t seed)
    : channels_(channels), tex_size_(size) {
  Rng rng(mix_seed(seed, 0x7e47u));
  textures_.reserve(count);
  for (std::size_t i = 0; i < count; ++i) textures_.push_back(make_texture(i, channels, size, rng));
}

TextureBank::TextureBank(std::vector<std::vector<float>> textures, std::size_t channels,
                         std::size_t tex_size)
    : textures_(std::move(textures)), channels_(channels), tex_size_(tex_size) {
  for (const auto& t : textures_)
    if (t.size() != channels * tex_size * tex_size)
      throw ShapeError("texture size does not match channels x size x size");
}

float TextureBank::sample(std::size_t i, std::size_t c, std::size_t y, std::size_t x) const {
  const auto& t = textures_.at(i);
  return t[(c * tex_size_ + y % tex_size_) * tex_size_ + x % tex_size_];
}

Observation random_overlay(const Observation& s, const TextureBank& bank, double alpha, Rng& rng) {
  if (bank.size() == 0) throw Error("random_overlay: texture bank is empty");
  if (bank.channels() != s.channels) throw ShapeError("texture channels do not match observation");
  const std::size_t idx = rng.uniform_int(bank.size());
  Observation out = s;
  const float a = static_cast<float>(alpha);
  const float b = static_cast<float>(1.0 - alpha);
  for (std::size_t f = 0; f < Observation::kFrames; ++f)
    for (std::size_t c = 0; c < s.channels; ++c)
      for (std::size_t y = 0; y < s.size; ++y)
        for (std::size_t x = 0; x < s.size; ++x) {
          float& v = out.at(f, c, y, x);
          v = std::clamp(a * v + b * bank.sample(idx, c, y, x), 0.0f, 1.0f);
        }
  return out;
}

Observation convolve_and_normalize(const Observation& s, const std::vector<double>& kernel,
                                   std::size_t k) {
  const std::size_t C = s.channels, n = s.size;
  if (k % 2 == 0) throw Error("random_conv kernel_size must be odd");
  if (kernel.size() != C * C * k * k) throw ShapeError("random_conv kernel has wrong size");
  const int r = static_cast<int>(k / 2);
  const int ni = static_cast<int>(n);
  std::vector<double> conv(s.pixels.size());
  for (std::size_t f = 0; f < Observation::kFrames; ++f)
    for (std::size_t co = 0; co < C; ++co)
      for (int y = 0; y < ni; ++y)
        for (int x = 0; x < ni; ++x) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < C; ++ci)
            for (int ky = -r; ky <= r; ++ky)
              for (int kx = -r; kx <= r; ++kx) {
                const int yy = std::clamp(y + ky, 0, ni - 1);
                const int xx = std::clamp(x + kx, 0, ni - 1);
                acc += kernel[((co * C + ci) * k + static_cast<std::size_t>(ky + r)) * k +
                              static_cast<std::size_t>(kx + r)] *
                       s.at(f, ci, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
              }
          conv[((f * C + co) * n + static_cast<std::size_t>(y)) * n + static_cast<std::size_t>(x)] = acc;
        }
  const auto [lo, hi] = std::minmax_element(conv.begin(), conv.end());
  const double range = *hi - *lo;
  Observation out = s;
  for (std::size_t i = 0; i < conv.size(); ++i)
    out.pixels[i] = range > 1e-12 ? static_cast<float>((conv[i] - *lo) / range)
                                  : static_cast<float>(std::clamp(conv[i], 0.0, 1.0));
  return out;
}

Observation random_conv(const Observation& s, std::size_t kernel_size, Rng& rng) {
  if (kernel_size % 2 == 0) throw Error("random_conv kernel_size must be odd");
  const double sd = 1.0 / static_cast<double>(kernel_size);
  std::vector<double> kernel(s.channels * s.channels * kernel_size * kernel_size);
  for (auto& w : kernel) w = sd * rng.normal();
  return convolve_and_normalize(s, kernel, kernel_size);
}

Augmenter::Augmenter(AugmentConfig config, std::size_t channels, std::size_t frame_size)
    : config_(config), bank_(config.bank_size, channels, frame_size, config.texture_bank_seed) {
  config_.validate();
}

Observation Augmenter::apply(const Observation& s, Rng& rng) const {
  return config_.kind == AugmentKind::RandomOverlay ? random_overlay(s, bank_, config_.blend_alpha, rng)
                                                    : random_conv(s, config_.kernel_size, rng);
}

}  // namespace scpl
