#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scpl/agent.hpp"
#include "scpl/augment.hpp"
#include "scpl/env.hpp"

namespace scpl {

/// Everything that determines a training run. With a fixed seed, a run is fully determined.
struct RunConfig {
  EnvConfig env;
  std::string train_setting = "clean";
  std::vector<std::string> eval_settings = {"clean", "noise_video"};
  double perturb_severity = 1.0;
  std::uint64_t perturb_seed = 1;

  AgentConfig agent;
  AugmentConfig augment;

  std::size_t total_env_steps = 20000;
  std::size_t init_steps = 1000;     // uniform random actions, no updates
  std::size_t update_every = 1;      // env steps per agent update
  std::size_t eval_every = 5000;
  std::size_t eval_episodes = 5;
  std::size_t saliency_stride = 10;  // attention metrics on every k-th evaluated state
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  bool log_losses = true;

  /// Copies frame geometry from env into the encoder spec.
  void sync_geometry();
  void validate() const;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Flat `key = value` lines with dotted section names (`agent.gamma = 0.99`); `#` starts a
/// comment. Unknown keys and malformed values are errors. `agent.preset = <name>` sets all
/// four toggles at once; later toggle keys override it.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every key in a fixed order; parse_run_config(to_config_text(c)) reproduces c exactly.
std::string to_config_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace scpl
