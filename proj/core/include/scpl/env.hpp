#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "scpl/image.hpp"
#include "scpl/rng.hpp"

namespace scpl {

/// A stack of three consecutive frames, each `channels x size x size`, values in [0, 1].
/// Layout: [frame][channel][y][x]; the last frame is the newest.
struct Observation {
  static constexpr std::size_t kFrames = 3;

  std::size_t channels = 0;
  std::size_t size = 0;
  std::vector<float> pixels;

  Observation() = default;
  Observation(std::size_t c, std::size_t s, float fill = 0.0f)
      : channels(c), size(s), pixels(kFrames * c * s * s, fill) {}

  std::size_t frame_len() const { return channels * size * size; }
  std::size_t stacked_channels() const { return kFrames * channels; }
  float* frame(std::size_t f) { return pixels.data() + f * frame_len(); }
  const float* frame(std::size_t f) const { return pixels.data() + f * frame_len(); }
  float& at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) {
    return pixels[((f * channels + c) * size + y) * size + x];
  }
  float at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[((f * channels + c) * size + y) * size + x];
  }
  bool same_geometry(const Observation& o) const { return channels == o.channels && size == o.size; }
  bool operator==(const Observation& o) const = default;
};

enum class PerturbKind { Clean, ColorShift, NoiseVideo };

struct PerturbSetting {
  PerturbKind kind = PerturbKind::Clean;
  double severity = 1.0;
  std::uint64_t seed = 0;

  std::string name() const;
  /// "clean", "color_shift" or "noise_video".
  static PerturbSetting parse(const std::string& name, double severity = 1.0, std::uint64_t seed = 0);
  bool operator==(const PerturbSetting&) const = default;
};

struct EnvConfig {
  std::size_t frame_size = 32;
  std::size_t channels = 3;
  std::size_t episode_length = 100;
  std::size_t action_repeat = 1;
  double damping = 0.8;
  double accel = 0.02;
  double capture_radius = 0.05;
  double capture_bonus = 1.0;
};

struct EnvState {
  std::array<double, 2> agent_pos{};
  std::array<double, 2> agent_vel{};
  std::array<double, 2> goal_pos{};
  std::size_t step_count = 0;
  std::size_t background_phase = 0;
  Rng rng_stream{0};
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  bool captured = false;  // true termination, as opposed to the time limit
};

/// Pixel-centre of a position: maps [0,1] onto [2, size-3] so sprites never clip.
std::array<int, 2> sprite_pixel(const std::array<double, 2>& pos, std::size_t frame_size);

inline constexpr int kAgentRadius = 2;
inline constexpr int kGoalHalf = 2;  // 5x5 square

/// Deterministic point-mass control task rendered to pixels.
///
/// The agent (filled disc, radius 2 px) must reach the goal (5x5 square). Dynamics are a
/// damped double integrator; reward is the negative distance plus a bonus on capture.
/// Backgrounds depend on the PerturbSetting; sprites are identical under every setting.
class PixelPointMass {
 public:
  explicit PixelPointMass(EnvConfig config = {});

  Observation reset(std::uint64_t seed, const PerturbSetting& setting);
  StepResult step(std::span<const double> action);

  /// 1 exactly at sprite pixels of the newest frame.
  BitMask ground_truth_mask() const;

  /// Renders the current 3-frame history under any setting (paired render of the same state).
  Observation observe(const PerturbSetting& setting) const;
  const Observation& observation() const { return obs_; }

  const EnvState& state() const { return state_; }
  const EnvConfig& config() const { return config_; }
  const PerturbSetting& setting() const { return setting_; }
  bool done() const { return done_; }
  std::uint64_t episode_seed() const { return episode_seed_; }

  /// Places agent (at rest) and goal directly and re-renders the stack; for tests and probes.
  void set_positions(const std::array<double, 2>& agent, const std::array<double, 2>& goal);

  /// Exact text snapshot of the episode state (positions, history, rng, flags).
  std::string save_state() const;
  void load_state(const std::string& text);

  /// Renders a single frame (channels x size x size) of `state` under `setting`.
  std::vector<float> render_frame(const EnvState& state, const PerturbSetting& setting) const;

 private:
  struct Background {
    std::vector<double> texture;  // channels x tex x tex (noise_video)
    std::array<double, 3> gain{1, 1, 1};
    std::array<double, 3> bias{0, 0, 0};
  };
  const Background& background(const PerturbSetting& setting) const;
  double distance() const;
  double reward_now() const;
  void push_history();

  EnvConfig config_;
  PerturbSetting setting_;
  EnvState state_;
  std::array<EnvState, Observation::kFrames> history_{};
  Observation obs_;
  std::uint64_t episode_seed_ = 0;
  bool done_ = true;
  bool active_ = false;
  mutable std::map<std::tuple<int, std::uint64_t, double>, Background> backgrounds_;
};

/// Writes one frame of an observation as binary PGM (1 channel) or PPM (3 channels).
void write_frame_pnm(const std::filesystem::path& path, const Observation& obs, std::size_t frame);

}  // namespace scpl
