#pragma once

// Plain SAC written directly against the graph primitives, without any of the
// agent's branch/toggle plumbing. Starts from a copy of an Agent's parameters
// and random streams so the two can be compared step by step.

#include "scpl/agent.hpp"

namespace scpl::testing {

class SacReference {
 public:
  explicit SacReference(Agent& agent)
      : cfg_(agent.config()), params_(agent.params()), rngs_(agent.rngs()) {
    const auto& net = cfg_.net;
    const std::size_t B = cfg_.batch_size, A = net.action_dim, E = net.encoder.embed_dim;
    const Shape obs{B, net.encoder.in_channels, net.encoder.frame_size, net.encoder.frame_size};

    target_ = std::make_unique<Graph<float>>(params_);
    {
      auto& g = *target_;
      NodeId x = g.input("obs_next", obs);
      NodeId noise = g.input("noise", {B, A});
      NodeId e = encoder(g, "target/enc", net.encoder, x);
      auto pol = policy_head(g, mlp(g, "actor", net.mlp_layers, e), A, net.log_std);
      auto smp = squashed_sample_nodes(g, pol, noise);
      NodeId h = g.concat(e, smp.action, 1);
      NodeId q = g.minimum(mlp(g, "target/critic1", net.mlp_layers, h),
                           mlp(g, "target/critic2", net.mlp_layers, h));
      target_value_ = g.sub(q, g.mul(g.exp(g.param("log_temp")), smp.log_prob));
    }
    critic_ = std::make_unique<Graph<float>>(params_);
    {
      auto& g = *critic_;
      NodeId x = g.input("obs", obs);
      NodeId a = g.input("action", {B, A});
      NodeId y = g.input("y", {B, 1});
      NodeId h = g.concat(encoder(g, "enc", net.encoder, x), a, 1);
      NodeId d1 = g.sub(mlp(g, "critic1", net.mlp_layers, h), y);
      NodeId d2 = g.sub(mlp(g, "critic2", net.mlp_layers, h), y);
      critic_loss_ = g.add(g.mean(g.square(d1)), g.mean(g.square(d2)));
    }
    embed_ = std::make_unique<Graph<float>>(params_);
    embed_out_ = encoder(*embed_, "enc", net.encoder, embed_->input("obs", obs));
    actor_ = std::make_unique<Graph<float>>(params_);
    {
      auto& g = *actor_;
      NodeId e = g.input("embed", {B, E});
      NodeId noise = g.input("noise", {B, A});
      auto pol = policy_head(g, mlp(g, "actor", net.mlp_layers, e), A, net.log_std);
      auto smp = squashed_sample_nodes(g, pol, noise);
      NodeId h = g.concat(e, smp.action, 1);
      NodeId q = g.minimum(mlp(g, "critic1", net.mlp_layers, h), mlp(g, "critic2", net.mlp_layers, h));
      NodeId temp = g.exp(g.param("log_temp"));
      actor_loss_ = g.mean(g.sub(g.mul(g.stop_gradient(temp), smp.log_prob), q));
      NodeId slack = g.stop_gradient(g.add_scalar(g.scale(smp.log_prob, -1.0f), static_cast<float>(A)));
      temp_loss_ = g.mean(g.mul(temp, slack));
    }
    auto names = [&](const std::vector<std::string>& prefixes) { return group_names(params_, prefixes); };
    critic_opt_ = Adam<float>({cfg_.lr_critic}, params_, names({"enc.", "critic1.", "critic2."}));
    actor_opt_ = Adam<float>({cfg_.lr_actor}, params_, names({"actor."}));
    temp_opt_ = Adam<float>({cfg_.lr_temp}, params_, names({"log_temp"}));
  }

  SacReference(const SacReference&) = delete;

  void update(const ReplayBuffer& buffer) {
    const auto& net = cfg_.net;
    const std::size_t B = cfg_.batch_size, A = net.action_dim;
    TransitionBatch batch = buffer.sample(B, rngs_.sample);

    target_->bind("obs_next", stack(batch.next_obs));
    target_->bind("noise", noise(B, A));
    target_->run();
    const auto& v = target_->value(target_value_);
    Tensor<float> y({B, 1});
    for (std::size_t i = 0; i < B; ++i)
      y[i] = batch.reward[i] + static_cast<float>(cfg_.gamma) * (1.0f - batch.done[i]) * v[i];

    critic_->bind("obs", stack(batch.obs));
    critic_->bind("action", batch.action);
    critic_->bind("y", y);
    critic_->run();
    critic_opt_.step(params_, critic_->backward(critic_loss_, {Wrt::Parameters, false, {"enc.", "critic1.", "critic2."}}));

    embed_->bind("obs", stack(batch.obs));
    embed_->run();
    actor_->bind("embed", embed_->value(embed_out_));
    actor_->bind("noise", noise(B, A));
    actor_->run();
    auto ga = actor_->backward(actor_loss_, {Wrt::Parameters, false, {"actor."}});
    auto gt = actor_->backward(temp_loss_, {Wrt::Parameters, false, {"log_temp"}});
    actor_opt_.step(params_, ga);
    temp_opt_.step(params_, gt);

    if (++updates_ % cfg_.target_update_freq == 0) {
      for (auto& [name, t] : params_.all()) {
        if (name.rfind("target/", 0) != 0) continue;
        const auto& p = params_.get(name.substr(7));
        const float tau = static_cast<float>(name.rfind("target/enc.", 0) == 0 ? cfg_.tau_encoder : cfg_.tau_critic);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * p[i] + (1.0f - tau) * t[i];
      }
    }
  }

  const ParamStore<float>& params() const { return params_; }

 private:
  Tensor<float> stack(const std::vector<Observation>& obs) const {
    const auto& e = cfg_.net.encoder;
    Tensor<float> out({obs.size(), e.in_channels, e.frame_size, e.frame_size});
    std::size_t off = 0;
    for (const auto& o : obs) {
      std::copy(o.pixels.begin(), o.pixels.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
      off += o.pixels.size();
    }
    return out;
  }
  Tensor<float> noise(std::size_t rows, std::size_t cols) {
    Tensor<float> t({rows, cols});
    for (auto& x : t.data) x = static_cast<float>(rngs_.policy.normal());
    return t;
  }

  AgentConfig cfg_;
  ParamStore<float> params_;
  AgentRngs rngs_;
  std::size_t updates_ = 0;
  std::unique_ptr<Graph<float>> target_, critic_, embed_, actor_;
  NodeId target_value_, critic_loss_, embed_out_, actor_loss_, temp_loss_;
  Adam<float> critic_opt_, actor_opt_, temp_opt_;
};

/// Random transitions with env-rendered observations, quantized like the harness does.
inline void fill_buffer(ReplayBuffer& buf, std::size_t n, const EnvConfig& env_cfg, std::uint64_t seed) {
  PixelPointMass env(env_cfg);
  Rng rng(seed);
  auto setting = PerturbSetting::parse("clean");
  Observation obs = env.reset(rng.next_u64(), setting);
  quantize_observation(obs);
  for (std::size_t i = 0; i < n; ++i) {
    const float a[2] = {static_cast<float>(rng.uniform(-1, 1)), static_cast<float>(rng.uniform(-1, 1))};
    const double ad[2] = {a[0], a[1]};
    auto r = env.step(ad);
    quantize_observation(r.obs);
    buf.add(obs, a, r.reward, r.captured, r.obs);
    obs = r.done ? env.reset(rng.next_u64(), setting) : r.obs;
    quantize_observation(obs);
  }
}

}  // namespace scpl::testing
