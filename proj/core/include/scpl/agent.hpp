#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "scpl/adam.hpp"
#include "scpl/agent_graphs.hpp"
#include "scpl/augment.hpp"
#include "scpl/replay.hpp"
#include "scpl/saliency.hpp"

namespace scpl {

/// Which SCPL modules are wired on top of SAC.
struct AgentToggles {
  bool aug_critic = true;              // L_Q2
  bool saliency_consistency = true;    // L_QC1, L_QC2
  bool dynamics = true;                // L_Te, L_Te_a
  bool policy_consistency = true;      // L_pi2

  /// sac, svea, sac_vc, sac_pc, sac_dyn, scpl_no_dyn, scpl
  static AgentToggles preset(const std::string& name);
  static const std::vector<std::string>& preset_names();
  bool any() const { return aug_critic || saliency_consistency || dynamics || policy_consistency; }
  bool needs_augmentation() const { return aug_critic || dynamics || policy_consistency; }
  bool operator==(const AgentToggles&) const = default;
};

struct AgentConfig {
  double gamma = 0.99;
  double lambda = 0.5;
  double beta = 1.0;
  double rho = 0.95;
  std::size_t batch_size = 128;
  double lr_actor = 1e-3;
  double lr_critic = 1e-3;
  double lr_temp = 1e-4;
  std::size_t target_update_freq = 2;
  std::size_t dynamics_update_freq = 1;
  std::size_t buffer_capacity = 100000;
  double tau_critic = 0.01;
  double tau_encoder = 0.05;
  bool stop_grad_unmasked = false;
  SaliencyMode saliency_mode = SaliencyMode::Guided;
  AgentToggles toggles;
  NetConfig net;

  void validate() const;
};

enum class ActMode { Stochastic, Deterministic };

struct StepDiagnostics {
  std::size_t update = 0;
  double l_q1 = 0, l_q2 = 0, l_qc1 = 0, l_qc2 = 0;
  double l_te = 0, l_te_a = 0;
  double l_pi1 = 0, l_pi2 = 0, l_temp = 0;
  double temperature = 0;
  double critic_grad_norm = 0, dynamics_grad_norm = 0, actor_grad_norm = 0;
  bool dynamics_updated = false;
  bool targets_updated = false;

  static const std::vector<std::string>& columns();
  std::vector<double> values() const;
};

enum class UpdatePhase { Critic, Dynamics, Policy, Target };

/// Per-sample policy distribution before the tanh squash.
struct PolicyDistribution {
  std::vector<double> mean;
  std::vector<double> log_std;
};

/// Named random streams of the agent; serialized with checkpoints.
struct AgentRngs {
  Rng sample{0};
  Rng augment{0};
  Rng policy{0};
  Rng act{0};
};

class Agent : public SaliencySource {
 public:
  using PhaseObserver =
      std::function<void(UpdatePhase, bool after, const ParamStore<float>& params)>;

  Agent(AgentConfig config, AugmentConfig augment, std::uint64_t seed);
  // Graphs hold pointers into params_.
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  std::vector<float> act(const Observation& obs, ActMode mode);
  PolicyDistribution policy(const Observation& obs);

  /// One training iteration: critic, dynamics (every N_A), policy, then targets.
  StepDiagnostics update(const ReplayBuffer& buffer);

  std::vector<float> input_gradient(const Observation& obs, std::span<const float> action,
                                    SaliencyMode mode) override;
  /// Per-sample saliency masks for a stack of observations under shared-index actions.
  std::vector<BitMask> saliency_masks(const std::vector<const Observation*>& obs,
                                      const Tensor<float>& actions);

  const AgentConfig& config() const { return config_; }
  const AugmentConfig& augment_config() const { return augment_config_; }
  const Augmenter& augmenter() const { return augmenter_; }
  ParamStore<float>& params() { return params_; }
  const ParamStore<float>& params() const { return params_; }
  AgentRngs& rngs() { return rngs_; }
  std::size_t updates() const { return updates_; }
  void set_updates(std::size_t n) { updates_ = n; }

  /// Optimizers keyed by group: critic, dynamics, actor, temp.
  std::map<std::string, Adam<float>*> optimizers();

  void set_phase_observer(PhaseObserver obs) { observer_ = std::move(obs); }

 private:
  template <typename G>
  G& cached(std::map<std::size_t, std::unique_ptr<G>>& cache, std::size_t n);
  Tensor<float> stack(const std::vector<const Observation*>& obs) const;
  void notify(UpdatePhase phase, bool after) {
    if (observer_) observer_(phase, after, params_);
  }
  void soft_update();

  AgentConfig config_;
  AugmentConfig augment_config_;
  Augmenter augmenter_;
  ParamStore<float> params_;
  AgentRngs rngs_;
  Adam<float> critic_opt_, dynamics_opt_, actor_opt_, temp_opt_;
  std::size_t updates_ = 0;
  PhaseObserver observer_;

  std::unique_ptr<CriticLossGraph<float>> critic_graph_;
  std::unique_ptr<TargetGraph<float>> target_graph_;
  std::unique_ptr<DynamicsLossGraph<float>> dynamics_graph_;
  std::unique_ptr<ActorLossGraph<float>> actor_graph_;
  std::map<std::size_t, std::unique_ptr<EmbedGraph<float>>> embed_graphs_;
  std::map<std::size_t, std::unique_ptr<PolicyGraph<float>>> policy_graphs_;
  std::map<std::size_t, std::unique_ptr<SaliencyGraph<float>>> saliency_graphs_;
};

/// Global L2 norm over all tensors in `grads`.
double grad_norm(const Grads<float>& grads);

/// Names of all parameters whose name starts with one of `prefixes`.
std::vector<std::string> group_names(const ParamStore<float>& store,
                                     const std::vector<std::string>& prefixes);

}  // namespace scpl
