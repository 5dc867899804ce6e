#include "scpl/agent.hpp"

#include <algorithm>
#include <cmath>

namespace scpl {

namespace {

Tensor<float> normal_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor<float> t({rows, cols});
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

Tensor<float> tile(const Tensor<float>& a, std::size_t k) {
  Tensor<float> out({k * a.shape[0], a.shape[1]});
  for (std::size_t i = 0; i < k; ++i) std::copy(a.data.begin(), a.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * a.size()));
  return out;
}

void check_terms(const char* what, const std::vector<std::pair<const char*, double>>& terms) {
  bool ok = true;
  for (const auto& [n, v] : terms) ok = ok && std::isfinite(v);
  if (ok) return;
  std::string msg = std::string("non-finite ") + what + " loss:";
  for (const auto& [n, v] : terms) msg += std::string(" ") + n + "=" + std::to_string(v);
  throw NumericError(msg);
}

template <typename G>
void run_checked(G& graph, const char* what) {
  try {
    graph.g.run();
  } catch (const NumericError& e) {
    throw NumericError(std::string(what) + " loss: " + e.what());
  }
}

}  // namespace

AgentToggles AgentToggles::preset(const std::string& name) {
  AgentToggles t{false, false, false, false};
  if (name == "sac") return t;
  if (name == "svea") {
    t.aug_critic = true;
  } else if (name == "sac_vc") {
    t.aug_critic = t.saliency_consistency = true;
  } else if (name == "sac_pc") {
    t.policy_consistency = true;
  } else if (name == "sac_dyn") {
    t.dynamics = true;
  } else if (name == "scpl_no_dyn") {
    t.aug_critic = t.saliency_consistency = t.policy_consistency = true;
  } else if (name == "scpl") {
    t = AgentToggles{};
  } else {
    throw Error("unknown agent preset '" + name + "'");
  }
  return t;
}

const std::vector<std::string>& AgentToggles::preset_names() {
  static const std::vector<std::string> names = {"sac",     "svea",        "sac_vc", "sac_pc",
                                                 "sac_dyn", "scpl_no_dyn", "scpl"};
  return names;
}

void AgentConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error("gamma must lie in [0, 1)");
  if (!(lambda >= 0.0) || !(beta >= 0.0)) throw Error("lambda and beta must be non-negative");
  if (!(rho >= 0.0 && rho < 1.0)) throw Error("rho must lie in [0, 1)");
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (!(lr_actor > 0 && lr_critic > 0 && lr_temp > 0)) throw Error("learning rates must be positive");
  if (target_update_freq == 0 || dynamics_update_freq == 0)
    throw Error("update frequencies must be positive");
  if (buffer_capacity == 0) throw Error("buffer_capacity must be positive");
  if (!(tau_critic > 0 && tau_critic <= 1 && tau_encoder > 0 && tau_encoder <= 1))
    throw Error("target update rates must lie in (0, 1]");
  if (net.encoder.in_channels % Observation::kFrames != 0)
    throw Error("encoder in_channels must be a multiple of the frame stack");
  if (net.action_dim == 0 || net.hidden == 0 || net.mlp_layers == 0 || net.dyn_layers == 0)
    throw Error("network sizes must be positive");
  if (!(net.init_temperature > 0)) throw Error("init_temperature must be positive");
  net.encoder.flat_dim();
}

const std::vector<std::string>& StepDiagnostics::columns() {
  static const std::vector<std::string> cols = {
      "update", "L_Q1",  "L_Q2",  "L_QC1",       "L_QC2",            "L_Te",
      "L_Te_a", "L_pi1", "L_pi2", "L_temp",      "temperature",      "critic_grad_norm",
      "dynamics_grad_norm",       "actor_grad_norm"};
  return cols;
}

std::vector<double> StepDiagnostics::values() const {
  return {static_cast<double>(update), l_q1, l_q2, l_qc1, l_qc2, l_te, l_te_a, l_pi1, l_pi2,
          l_temp, temperature, critic_grad_norm, dynamics_grad_norm, actor_grad_norm};
}

double grad_norm(const Grads<float>& grads) {
  double s = 0.0;
  for (const auto& [k, g] : grads)
    for (float v : g.data) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

std::vector<std::string> group_names(const ParamStore<float>& store,
                                     const std::vector<std::string>& prefixes) {
  std::vector<std::string> out;
  for (const auto& p : prefixes)
    for (auto& n : store.names_with_prefix(p)) out.push_back(n);
  return out;
}

Agent::Agent(AgentConfig config, AugmentConfig augment, std::uint64_t seed)
    : config_(config),
      augment_config_(augment),
      augmenter_(augment, config.net.encoder.in_channels / Observation::kFrames,
                 config.net.encoder.frame_size) {
  config_.validate();
  Rng init(mix_seed(seed, 1));
  init_agent_params(params_, config_.net, init);
  rngs_.sample = Rng(mix_seed(seed, 2));
  rngs_.augment = Rng(mix_seed(seed, 3));
  rngs_.policy = Rng(mix_seed(seed, 4));
  rngs_.act = Rng(mix_seed(seed, 5));

  critic_opt_ = Adam<float>({config_.lr_critic}, params_, group_names(params_, kCriticGroup));
  dynamics_opt_ = Adam<float>({config_.lr_critic}, params_, group_names(params_, kDynamicsGroup));
  actor_opt_ = Adam<float>({config_.lr_actor}, params_, group_names(params_, kActorGroup));
  temp_opt_ = Adam<float>({config_.lr_temp}, params_, group_names(params_, kTempGroup));

  const std::size_t B = config_.batch_size;
  const auto& t = config_.toggles;
  const auto& net = config_.net;
  critic_graph_ = std::make_unique<CriticLossGraph<float>>(
      params_, net, B, CriticLayout{t.aug_critic, t.saliency_consistency}, config_.lambda,
      config_.stop_grad_unmasked);
  target_graph_ = std::make_unique<TargetGraph<float>>(params_, net, B, t.dynamics ? 2 : 1);
  if (t.dynamics) dynamics_graph_ = std::make_unique<DynamicsLossGraph<float>>(params_, net, B, 2);
  actor_graph_ = std::make_unique<ActorLossGraph<float>>(params_, net, B, t.policy_consistency,
                                                         config_.beta);
}

std::map<std::string, Adam<float>*> Agent::optimizers() {
  return {{"critic", &critic_opt_}, {"dynamics", &dynamics_opt_}, {"actor", &actor_opt_},
          {"temp", &temp_opt_}};
}

template <typename G>
G& Agent::cached(std::map<std::size_t, std::unique_ptr<G>>& cache, std::size_t n) {
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<G>(params_, config_.net, n);
  return *slot;
}

Tensor<float> Agent::stack(const std::vector<const Observation*>& obs) const {
  const auto& e = config_.net.encoder;
  Tensor<float> out({obs.size(), e.in_channels, e.frame_size, e.frame_size});
  const std::size_t len = e.in_channels * e.frame_size * e.frame_size;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (obs[i]->pixels.size() != len)
      throw ShapeError("observation does not match encoder input geometry");
    std::copy(obs[i]->pixels.begin(), obs[i]->pixels.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * len));
  }
  return out;
}

PolicyDistribution Agent::policy(const Observation& obs) {
  auto& pg = cached(policy_graphs_, 1);
  pg.g.bind("obs", stack({&obs}));
  pg.g.run();
  PolicyDistribution d;
  for (float v : pg.g.value(pg.pol.mean).data) d.mean.push_back(v);
  for (float v : pg.g.value(pg.pol.log_std).data) d.log_std.push_back(v);
  return d;
}

std::vector<float> Agent::act(const Observation& obs, ActMode mode) {
  auto d = policy(obs);
  std::vector<float> out(d.mean.size());
  if (mode == ActMode::Deterministic) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(std::tanh(d.mean[i]));
    return out;
  }
  std::vector<double> noise(d.mean.size());
  for (auto& n : noise) n = rngs_.act.normal();
  auto s = squashed_sample(DiagGaussian(d.mean, d.log_std, config_.net.log_std), noise);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(s.action[i]);
  return out;
}

std::vector<float> Agent::input_gradient(const Observation& obs, std::span<const float> action,
                                         SaliencyMode mode) {
  if (action.size() != config_.net.action_dim) throw ShapeError("action has wrong dimension");
  auto& sg = cached(saliency_graphs_, 1);
  sg.g.bind("obs", stack({&obs}));
  sg.g.bind("action", Tensor<float>({1, action.size()}, std::vector<float>(action.begin(), action.end())));
  sg.g.run();
  auto grads = sg.g.backward(sg.root, {Wrt::Inputs, mode == SaliencyMode::Guided, {}});
  return grads.at("obs").data;
}

std::vector<BitMask> Agent::saliency_masks(const std::vector<const Observation*>& obs,
                                           const Tensor<float>& actions) {
  const std::size_t n = obs.size();
  auto& sg = cached(saliency_graphs_, n);
  sg.g.bind("obs", stack(obs));
  sg.g.bind("action", actions);
  sg.g.run();
  const SaliencyMode mode = config_.saliency_mode;
  auto grads = sg.g.backward(sg.root, {Wrt::Inputs, mode == SaliencyMode::Guided, {}});
  const auto& g = grads.at("obs").data;
  const auto& e = config_.net.encoder;
  const std::size_t len = e.in_channels * e.frame_size * e.frame_size;
  std::vector<BitMask> masks;
  masks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto map = aggregate_gradient(std::span<const float>(g.data() + i * len, len), e.in_channels,
                                  e.frame_size, e.frame_size, mode);
    masks.push_back(rho_quantile_binarize(map, config_.rho));
  }
  return masks;
}

void Agent::soft_update() {
  for (auto& [name, target] : params_.all()) {
    if (name.rfind("target/", 0) != 0) continue;
    const std::string src = name.substr(7);
    const float tau = static_cast<float>(src.rfind("enc.", 0) == 0 ? config_.tau_encoder : config_.tau_critic);
    const auto& p = params_.get(src);
    for (std::size_t i = 0; i < target.size(); ++i)
      target[i] = tau * p[i] + (1.0f - tau) * target[i];
  }
}

StepDiagnostics Agent::update(const ReplayBuffer& buffer) {
  const std::size_t B = config_.batch_size;
  if (buffer.size() < B)
    throw Error("replay buffer holds " + std::to_string(buffer.size()) + " transitions, batch needs " +
                std::to_string(B));
  const auto& t = config_.toggles;
  StepDiagnostics diag;
  diag.update = updates_ + 1;

  TransitionBatch batch = buffer.sample(B, rngs_.sample);
  std::vector<Observation> aug, next_aug;
  if (t.needs_augmentation())
    for (const auto& o : batch.obs) aug.push_back(augmenter_.apply(o, rngs_.augment));
  if (t.dynamics)
    for (const auto& o : batch.next_obs) next_aug.push_back(augmenter_.apply(o, rngs_.augment));
  auto ptrs = [](const std::vector<Observation>& v, std::vector<const Observation*>& out) {
    for (const auto& o : v) out.push_back(&o);
  };

  // TD target from the clean next observation.
  auto& tg = *target_graph_;
  {
    std::vector<const Observation*> nx;
    ptrs(batch.next_obs, nx);
    ptrs(next_aug, nx);
    tg.g.bind("obs_next", stack(nx));
    tg.g.bind("noise", normal_tensor(B, config_.net.action_dim, rngs_.policy));
    run_checked(tg, "target value");
  }
  Tensor<float> y({B, 1});
  {
    const auto& v = tg.g.value(tg.value);
    const float gamma = static_cast<float>(config_.gamma);
    for (std::size_t i = 0; i < B; ++i)
      y[i] = batch.reward[i] + gamma * (1.0f - batch.done[i]) * v[i];
  }

  // Critic: branches [s, s_a?, s_hat?, s_hat_a?].
  std::vector<const Observation*> branches;
  ptrs(batch.obs, branches);
  if (t.aug_critic) ptrs(aug, branches);
  std::vector<Observation> masked;
  if (t.saliency_consistency) {
    std::vector<const Observation*> src = branches;
    auto masks = saliency_masks(src, tile(batch.action, src.size() / B));
    masked.reserve(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) masked.push_back(apply_mask(*src[i], masks[i]));
    ptrs(masked, branches);
  }
  notify(UpdatePhase::Critic, false);
  auto& cg = *critic_graph_;
  cg.g.bind("obs", stack(branches));
  cg.g.bind("action", batch.action);
  cg.g.bind("y", y);
  run_checked(cg, "critic");
  diag.l_q1 = cg.g.value(cg.l_q1).item();
  if (t.aug_critic) diag.l_q2 = cg.g.value(cg.l_q2).item();
  if (t.saliency_consistency) diag.l_qc1 = cg.g.value(cg.l_qc1).item();
  if (t.saliency_consistency && t.aug_critic) diag.l_qc2 = cg.g.value(cg.l_qc2).item();
  check_terms("critic", {{"L_Q1", diag.l_q1}, {"L_Q2", diag.l_q2}, {"L_QC1", diag.l_qc1}, {"L_QC2", diag.l_qc2}});
  {
    auto grads = cg.g.backward(cg.total, {Wrt::Parameters, false, kCriticGroup});
    diag.critic_grad_norm = grad_norm(grads);
    critic_opt_.step(params_, grads);
  }
  notify(UpdatePhase::Critic, true);

  if (t.dynamics && updates_ % config_.dynamics_update_freq == 0) {
    notify(UpdatePhase::Dynamics, false);
    auto& dg = *dynamics_graph_;
    std::vector<const Observation*> src;
    ptrs(batch.obs, src);
    ptrs(aug, src);
    Tensor<float> reward({B, 1}, batch.reward);
    dg.g.bind("obs", stack(src));
    dg.g.bind("action", batch.action);
    dg.g.bind("target", tg.g.value(tg.embed));
    dg.g.bind("reward", reward);
    run_checked(dg, "dynamics");
    diag.l_te = dg.g.value(dg.l_te).item();
    diag.l_te_a = dg.g.value(dg.l_te_a).item();
    check_terms("dynamics", {{"L_Te", diag.l_te}, {"L_Te_a", diag.l_te_a}});
    auto grads = dg.g.backward(dg.total, {Wrt::Parameters, false, kDynamicsGroup});
    diag.dynamics_grad_norm = grad_norm(grads);
    dynamics_opt_.step(params_, grads);
    diag.dynamics_updated = true;
    notify(UpdatePhase::Dynamics, true);
  }

  notify(UpdatePhase::Policy, false);
  {
    std::vector<const Observation*> src;
    ptrs(batch.obs, src);
    if (t.policy_consistency) ptrs(aug, src);
    auto& eg = cached(embed_graphs_, src.size());
    eg.g.bind("obs", stack(src));
    eg.g.run();
    auto& ag = *actor_graph_;
    ag.g.bind("embed", eg.g.value(eg.embed));
    ag.g.bind("noise", normal_tensor(B, config_.net.action_dim, rngs_.policy));
    run_checked(ag, "policy");
    diag.l_pi1 = ag.g.value(ag.l_pi1).item();
    if (t.policy_consistency) diag.l_pi2 = ag.g.value(ag.l_pi2).item();
    diag.l_temp = ag.g.value(ag.temp_loss).item();
    check_terms("policy", {{"L_pi1", diag.l_pi1}, {"L_pi2", diag.l_pi2}, {"L_temp", diag.l_temp}});
    auto actor_grads = ag.g.backward(ag.total, {Wrt::Parameters, false, kActorGroup});
    auto temp_grads = ag.g.backward(ag.temp_loss, {Wrt::Parameters, false, kTempGroup});
    diag.actor_grad_norm = grad_norm(actor_grads);
    actor_opt_.step(params_, actor_grads);
    temp_opt_.step(params_, temp_grads);
  }
  notify(UpdatePhase::Policy, true);

  ++updates_;
  if (updates_ % config_.target_update_freq == 0) {
    notify(UpdatePhase::Target, false);
    soft_update();
    diag.targets_updated = true;
    notify(UpdatePhase::Target, true);
  }
  diag.temperature = std::exp(static_cast<double>(params_.get("log_temp")[0]));
  return diag;
}

}  // namespace scpl
