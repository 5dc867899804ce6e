#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scpl/agent.hpp"
#include "scpl/checkpoint.hpp"
#include "scpl/config.hpp"
#include "scpl/replay.hpp"

namespace scpl {

struct EvalResult {
  std::string setting;
  std::size_t episodes = 0;
  std::size_t states = 0;
  double mean_return = 0.0;
  /// Mean KL(pi(.|clean render) || pi(.|perturbed render)) over visited states.
  double action_kl = 0.0;
  /// Means over the states probed every `saliency_stride` steps.
  AttentionMetrics attention;
  std::size_t attention_states = 0;
};

/// Deterministic-policy rollouts; episode i starts from env seed `seed + i`.
EvalResult evaluate(Agent& agent, const EnvConfig& env, const PerturbSetting& setting,
                    std::size_t episodes, std::uint64_t seed, std::size_t saliency_stride = 10);

/// Writes frame, saliency map, rho-mask and ground truth for the first `states` states of one
/// deterministic episode. Returns the number of states written.
std::size_t dump_saliency(Agent& agent, const EnvConfig& env, const PerturbSetting& setting,
                          std::uint64_t seed, std::size_t states, const std::filesystem::path& dir,
                          const std::string& prefix = "");

/// Running means of per-update diagnostics.
struct LossAccumulator {
  std::vector<double> sums = std::vector<double>(StepDiagnostics::columns().size() - 1, 0.0);
  std::size_t count = 0;

  void add(const StepDiagnostics& d);
  std::vector<double> means() const;
  void reset() { *this = LossAccumulator{}; }
};

/// The environment-interaction loop of one run, advanced one env step at a time.
class Trainer {
 public:
  explicit Trainer(RunConfig config);

  /// One environment step and, when due, one agent update (returned).
  std::optional<StepDiagnostics> step();
  bool finished() const { return env_steps_ >= config_.total_env_steps; }

  std::size_t env_steps() const { return env_steps_; }
  std::size_t episodes() const { return episode_; }
  const RunConfig& config() const { return config_; }
  Agent& agent() { return *agent_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  LossAccumulator& losses() { return losses_; }
  /// Returns of completed training episodes, in order.
  const std::vector<double>& episode_returns() const { return episode_returns_; }

  /// Complete resumable state: parameters, optimizer moments, rng streams, replay, env.
  Checkpoint checkpoint();
  /// Loads a checkpoint taken from a run with the same configuration (output_dir and
  /// total_env_steps may differ).
  void restore(const Checkpoint& ckpt);

  /// Seed of the evaluation episodes used by `train`.
  std::uint64_t eval_seed() const;

 private:
  void begin_episode();

  RunConfig config_;
  PerturbSetting train_setting_;
  PixelPointMass env_;
  std::unique_ptr<Agent> agent_;
  ReplayBuffer buffer_;
  Rng explore_;
  Observation obs_;
  std::size_t env_steps_ = 0;
  std::size_t episode_ = 0;
  double episode_return_ = 0.0;
  std::vector<double> episode_returns_;
  LossAccumulator losses_;
};

/// Agent parameters (and optimizer state) in checkpoint form.
void write_agent_state(Agent& agent, Checkpoint& ckpt);
void read_agent_state(Agent& agent, const Checkpoint& ckpt);

/// Rebuilds the run configuration and agent stored in a checkpoint.
struct LoadedAgent {
  RunConfig config;
  std::unique_ptr<Agent> agent;
};
LoadedAgent load_agent(const Checkpoint& ckpt);

struct TrainOptions {
  /// Continue from this checkpoint instead of starting fresh.
  std::optional<std::filesystem::path> resume;
};

struct TrainResult {
  std::filesystem::path dir;
  std::size_t env_steps = 0;
  std::size_t updates = 0;
  std::vector<EvalResult> last_eval;
};

/// Runs a full training job into config.output_dir:
///   config.txt, metrics.csv, losses.csv, checkpoints/{initial,latest}.ckpt, saliency/*.pgm
TrainResult train(const RunConfig& config, const TrainOptions& options = {});

/// metrics.csv columns, in order.
const std::vector<std::string>& metrics_columns();

/// RFC-4180 field quoting (only when needed).
std::string csv_field(const std::string& s);
/// Shortest representation that round-trips.
std::string format_double(double v);

}  // namespace scpl
