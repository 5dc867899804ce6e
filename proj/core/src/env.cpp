#include "scpl/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scpl/value_noise.hpp"

namespace scpl {

namespace {

constexpr std::array<double, 3> kCleanRgb{0.15, 0.20, 0.25};
constexpr std::array<double, 3> kAgentRgb{1.00, 0.35, 0.20};
constexpr std::array<double, 3> kGoalRgb{0.20, 0.90, 0.35};
constexpr double kCleanGray = 0.20;
constexpr double kAgentGray = 1.00;
constexpr double kGoalGray = 0.60;

double colour(const std::array<double, 3>& rgb, double gray, std::size_t channels, std::size_t c) {
  return channels == 1 ? gray : rgb[c];
}

bool in_agent(int x, int y, const std::array<int, 2>& a) {
  const int dx = x - a[0], dy = y - a[1];
  return dx * dx + dy * dy <= kAgentRadius * kAgentRadius;
}

bool in_goal(int x, int y, const std::array<int, 2>& g) {
  return std::abs(x - g[0]) <= kGoalHalf && std::abs(y - g[1]) <= kGoalHalf;
}

}  // namespace

std::string PerturbSetting::name() const {
  switch (kind) {
    case PerturbKind::Clean: return "clean";
    case PerturbKind::ColorShift: return "color_shift";
    case PerturbKind::NoiseVideo: return "noise_video";
  }
  return "?";
}

PerturbSetting PerturbSetting::parse(const std::string& name, double severity, std::uint64_t seed) {
  PerturbSetting s;
  if (name == "clean") s.kind = PerturbKind::Clean;
  else if (name == "color_shift") s.kind = PerturbKind::ColorShift;
  else if (name == "noise_video") s.kind = PerturbKind::NoiseVideo;
  else throw Error("unknown perturbation setting '" + name + "'");
  if (!(severity >= 0.0 && severity <= 1.0)) throw Error("severity must lie in [0, 1]");
  s.severity = severity;
  s.seed = seed;
  return s;
}

std::array<int, 2> sprite_pixel(const std::array<double, 2>& pos, std::size_t frame_size) {
  const double span = static_cast<double>(frame_size) - 5.0;
  return {2 + static_cast<int>(std::lround(std::clamp(pos[0], 0.0, 1.0) * span)),
          2 + static_cast<int>(std::lround(std::clamp(pos[1], 0.0, 1.0) * span))};
}

PixelPointMass::PixelPointMass(EnvConfig config) : config_(config) {
  // Below 16 px the sprites cannot always be placed apart.
  if (config_.frame_size < 16) throw Error("frame_size must be at least 16");
  if (config_.channels != 1 && config_.channels != 3) throw Error("channels must be 1 or 3");
  if (config_.episode_length == 0 || config_.action_repeat == 0)
    throw Error("episode_length and action_repeat must be positive");
}

Observation PixelPointMass::reset(std::uint64_t seed, const PerturbSetting& setting) {
  setting_ = setting;
  episode_seed_ = seed;
  backgrounds_.clear();
  state_ = EnvState{};
  state_.rng_stream = Rng(seed);
  Rng& rng = state_.rng_stream;
  state_.goal_pos = {rng.uniform(), rng.uniform()};
  const auto gp = sprite_pixel(state_.goal_pos, config_.frame_size);
  do {
    state_.agent_pos = {rng.uniform(), rng.uniform()};
    const auto ap = sprite_pixel(state_.agent_pos, config_.frame_size);
    // Chebyshev distance >= 5 keeps the disc and the square apart.
    if (std::max(std::abs(ap[0] - gp[0]), std::abs(ap[1] - gp[1])) >= kAgentRadius + kGoalHalf + 1)
      break;
  } while (true);
  done_ = false;
  active_ = true;
  history_.fill(state_);
  obs_ = observe(setting_);
  return obs_;
}

void PixelPointMass::set_positions(const std::array<double, 2>& agent,
                                   const std::array<double, 2>& goal) {
  if (!active_) throw Error("set_positions before reset");
  state_.agent_pos = {std::clamp(agent[0], 0.0, 1.0), std::clamp(agent[1], 0.0, 1.0)};
  state_.agent_vel = {0.0, 0.0};
  state_.goal_pos = {std::clamp(goal[0], 0.0, 1.0), std::clamp(goal[1], 0.0, 1.0)};
  done_ = false;
  history_.fill(state_);
  obs_ = observe(setting_);
}

double PixelPointMass::distance() const {
  return std::hypot(state_.agent_pos[0] - state_.goal_pos[0],
                    state_.agent_pos[1] - state_.goal_pos[1]);
}

double PixelPointMass::reward_now() const {
  const double d = distance();
  return -d + (d < config_.capture_radius ? config_.capture_bonus : 0.0);
}

void PixelPointMass::push_history() {
  for (std::size_t f = 0; f + 1 < Observation::kFrames; ++f) history_[f] = history_[f + 1];
  history_.back() = state_;
  const std::size_t len = obs_.frame_len();
  std::copy(obs_.pixels.begin() + static_cast<std::ptrdiff_t>(len), obs_.pixels.end(), obs_.pixels.begin());
  auto frame = render_frame(state_, setting_);
  std::copy(frame.begin(), frame.end(), obs_.frame(Observation::kFrames - 1));
}

StepResult PixelPointMass::step(std::span<const double> action) {
  if (!active_) throw Error("step before reset");
  if (done_) throw Error("step called after episode end");
  if (action.size() != 2) throw ShapeError("action must have 2 components");
  bool captured = false;
  for (std::size_t r = 0; r < config_.action_repeat && !captured; ++r) {
    for (int i = 0; i < 2; ++i) {
      const double a = std::clamp(action[i], -1.0, 1.0);
      state_.agent_vel[i] = config_.damping * state_.agent_vel[i] + config_.accel * a;
      state_.agent_pos[i] += state_.agent_vel[i];
      if (state_.agent_pos[i] < 0.0 || state_.agent_pos[i] > 1.0) {
        state_.agent_pos[i] = std::clamp(state_.agent_pos[i], 0.0, 1.0);
        state_.agent_vel[i] = 0.0;
      }
    }
    captured = distance() < config_.capture_radius;
  }
  state_.step_count += 1;
  state_.background_phase += 1;
  StepResult out;
  out.reward = reward_now();
  done_ = captured || state_.step_count >= config_.episode_length;
  out.done = done_;
  out.captured = captured;
  push_history();
  out.obs = obs_;
  return out;
}

const PixelPointMass::Background& PixelPointMass::background(const PerturbSetting& setting) const {
  const auto key = std::make_tuple(static_cast<int>(setting.kind), setting.seed, setting.severity);
  auto it = backgrounds_.find(key);
  if (it != backgrounds_.end()) return it->second;
  Background bg;
  Rng rng(mix_seed(setting.seed, episode_seed_));
  const double sev = setting.severity;
  if (setting.kind == PerturbKind::ColorShift) {
    for (std::size_t c = 0; c < 3; ++c) {
      bg.gain[c] = rng.uniform(1.0 - sev, 1.0 + sev);
      bg.bias[c] = rng.uniform(-sev / 2.0, sev / 2.0);
    }
  } else if (setting.kind == PerturbKind::NoiseVideo) {
    const std::size_t tex = 2 * config_.frame_size;
    const std::size_t cell = std::max<std::size_t>(2, config_.frame_size / 8);
    for (std::size_t c = 0; c < config_.channels; ++c) {
      auto layer = value_noise(tex, tex, cell, 3, rng);
      bg.texture.insert(bg.texture.end(), layer.begin(), layer.end());
    }
  }
  return backgrounds_.emplace(key, std::move(bg)).first->second;
}

std::vector<float> PixelPointMass::render_frame(const EnvState& state,
                                                const PerturbSetting& setting) const {
  const std::size_t n = config_.frame_size, ch = config_.channels;
  const Background& bg = background(setting);
  const auto ap = sprite_pixel(state.agent_pos, n);
  const auto gp = sprite_pixel(state.goal_pos, n);
  const std::size_t tex = 2 * n;
  const std::size_t sx = state.background_phase % tex;
  const std::size_t sy = (state.background_phase / 2) % tex;
  std::vector<float> frame(ch * n * n);
  for (std::size_t c = 0; c < ch; ++c) {
    const double clean = colour(kCleanRgb, kCleanGray, ch, c);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const int xi = static_cast<int>(x), yi = static_cast<int>(y);
        double v = 0.0;
        if (in_agent(xi, yi, ap)) {
          v = colour(kAgentRgb, kAgentGray, ch, c);
        } else if (in_goal(xi, yi, gp)) {
          v = colour(kGoalRgb, kGoalGray, ch, c);
        } else {
          switch (setting.kind) {
            case PerturbKind::Clean:
              v = clean;
              break;
            case PerturbKind::ColorShift:
              v = std::clamp(bg.gain[c] * clean + bg.bias[c], 0.0, 1.0);
              break;
            case PerturbKind::NoiseVideo: {
              const double noise = bg.texture[(c * tex + (y + sy) % tex) * tex + (x + sx) % tex];
              v = (1.0 - setting.severity) * clean + setting.severity * noise;
              break;
            }
          }
        }
        frame[(c * n + y) * n + x] = static_cast<float>(v);
      }
  }
  return frame;
}

Observation PixelPointMass::observe(const PerturbSetting& setting) const {
  if (!active_) throw Error("observe before reset");
  Observation obs(config_.channels, config_.frame_size);
  for (std::size_t f = 0; f < Observation::kFrames; ++f) {
    auto frame = render_frame(history_[f], setting);
    std::copy(frame.begin(), frame.end(), obs.frame(f));
  }
  return obs;
}

BitMask PixelPointMass::ground_truth_mask() const {
  if (!active_) throw Error("ground_truth_mask before reset");
  const std::size_t n = config_.frame_size;
  BitMask mask(n, n);
  const auto ap = sprite_pixel(state_.agent_pos, n);
  const auto gp = sprite_pixel(state_.goal_pos, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const int xi = static_cast<int>(x), yi = static_cast<int>(y);
      mask.bits[y * n + x] = (in_agent(xi, yi, ap) || in_goal(xi, yi, gp)) ? 1 : 0;
    }
  return mask;
}

void write_frame_pnm(const std::filesystem::path& path, const Observation& obs, std::size_t frame) {
  if (frame >= Observation::kFrames) throw Error("frame index out of range");
  const std::size_t n = obs.size, ch = obs.channels;
  std::vector<std::uint8_t> px(n * n * ch);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t c = 0; c < ch; ++c)
        px[(y * n + x) * ch + c] = static_cast<std::uint8_t>(
            std::lround(255.0 * std::clamp(obs.at(frame, c, y, x), 0.0f, 1.0f)));
  write_pnm(path, n, n, ch, px);
}

namespace {

void write_state(std::ostream& os, const EnvState& st) {
  os << st.agent_pos[0] << ' ' << st.agent_pos[1] << ' ' << st.agent_vel[0] << ' '
     << st.agent_vel[1] << ' ' << st.goal_pos[0] << ' ' << st.goal_pos[1] << ' ' << st.step_count
     << ' ' << st.background_phase << '\n'
     << st.rng_stream.state() << '\n';
}

double read_double(std::istream& is) {
  std::string tok;
  is >> tok;
  return std::strtod(tok.c_str(), nullptr);
}

void read_state(std::istream& is, EnvState& st) {
  for (double* d : {&st.agent_pos[0], &st.agent_pos[1], &st.agent_vel[0], &st.agent_vel[1],
                    &st.goal_pos[0], &st.goal_pos[1]})
    *d = read_double(is);
  is >> st.step_count >> st.background_phase;
  std::string rng;
  is >> std::ws;
  std::getline(is, rng);
  st.rng_stream.set_state(rng);
}

}  // namespace

std::string PixelPointMass::save_state() const {
  std::ostringstream os;
  os << std::hexfloat;
  os << "env1 " << static_cast<int>(setting_.kind) << ' ' << setting_.severity << ' ' << setting_.seed
     << ' ' << episode_seed_ << ' ' << done_ << ' ' << active_ << '\n';
  write_state(os, state_);
  for (const auto& h : history_) write_state(os, h);
  return os.str();
}

void PixelPointMass::load_state(const std::string& text) {
  std::istringstream is(text);
  std::string magic;
  int kind = 0;
  is >> magic >> kind;
  if (magic != "env1" || kind < 0 || kind > 2) throw Error("bad environment snapshot");
  setting_.kind = static_cast<PerturbKind>(kind);
  setting_.severity = read_double(is);
  is >> setting_.seed >> episode_seed_ >> done_ >> active_;
  read_state(is, state_);
  for (auto& h : history_) read_state(is, h);
  if (!is) throw Error("truncated environment snapshot");
  backgrounds_.clear();
  obs_ = observe(setting_);
}

}  // namespace scpl
