#pragma once

// Loss and inference graphs of the agent, templated on the scalar type so the
// same wiring runs in float for training and in double for gradient checks.
//
// Batched inputs stack several "branches" along axis 0: branch i occupies rows
// [i*B, (i+1)*B). Parameter groups live in one ParamStore under the prefixes
// enc., critic1., critic2., actor., dyn.p., dyn.r., log_temp and their target/
// copies.

#include <string>

#include "scpl/gaussian.hpp"
#include "scpl/nn.hpp"

namespace scpl {

struct NetConfig {
  EncoderSpec encoder;
  std::size_t action_dim = 2;
  std::size_t hidden = 256;
  std::size_t mlp_layers = 3;
  std::size_t dyn_layers = 2;
  LogStdRange log_std{};
  double init_temperature = 0.1;
};

inline const std::vector<std::string> kCriticGroup = {"enc.", "critic1.", "critic2."};
inline const std::vector<std::string> kDynamicsGroup = {"enc.", "dyn."};
inline const std::vector<std::string> kActorGroup = {"actor."};
inline const std::vector<std::string> kTempGroup = {"log_temp"};

/// Creates every parameter (including target copies) from `rng`.
template <typename T>
void init_agent_params(ParamStore<T>& store, const NetConfig& net, Rng& rng) {
  const std::size_t E = net.encoder.embed_dim, A = net.action_dim, H = net.hidden;
  init_encoder(store, "enc", net.encoder, rng);
  init_mlp(store, "critic1", E + A, H, 1, net.mlp_layers, rng);
  init_mlp(store, "critic2", E + A, H, 1, net.mlp_layers, rng);
  init_mlp(store, "actor", E, H, 2 * A, net.mlp_layers, rng);
  init_mlp(store, "dyn.p", E + A, H, E, net.dyn_layers, rng);
  init_mlp(store, "dyn.r", E + A, H, 1, net.dyn_layers, rng);
  store.add("log_temp", Tensor<T>({1}, {static_cast<T>(std::log(net.init_temperature))}));
  std::vector<std::pair<std::string, Tensor<T>>> copies;
  for (const auto& [name, value] : store.all())
    if (name.rfind("enc.", 0) == 0 || name.rfind("critic", 0) == 0)
      copies.emplace_back("target/" + name, value);
  for (auto& [name, value] : copies) store.add(name, std::move(value));
}

template <typename T>
NodeId critic_head(Graph<T>& g, const std::string& prefix, const NetConfig& net, NodeId e,
                   NodeId a, bool guided = false) {
  return mlp(g, prefix, net.mlp_layers, g.concat(e, a, 1), guided);
}

/// Rows [i*B, (i+1)*B) of `x`; identity when the node holds a single branch.
template <typename T>
NodeId branch(Graph<T>& g, NodeId x, std::size_t i, std::size_t B) {
  if (g.shape(x)[0] == B) return x;
  return g.slice(x, 0, i * B, (i + 1) * B);
}

/// `a` stacked k times along axis 0.
template <typename T>
NodeId tile_rows(Graph<T>& g, NodeId a, std::size_t k) {
  NodeId out = a;
  for (std::size_t i = 1; i < k; ++i) out = g.concat(out, a, 0);
  return out;
}

template <typename T>
NodeId mse(Graph<T>& g, NodeId x, NodeId y) {
  return g.mean(g.square(g.sub(x, y)));
}

template <typename T>
Shape obs_shape(const NetConfig& net, std::size_t rows) {
  const auto& e = net.encoder;
  return {rows, e.in_channels, e.frame_size, e.frame_size};
}

struct CriticLayout {
  bool aug = false;   // s_alpha branch
  bool mask = false;  // saliency-masked branches
  std::size_t branches() const { return 1 + (aug ? 1 : 0) + (mask ? 1 + (aug ? 1 : 0) : 0); }
  std::size_t aug_index() const { return 1; }
  std::size_t mask_index() const { return aug ? 2 : 1; }
  std::size_t aug_mask_index() const { return 3; }
};

/// Value-consistency objective over stacked branches [s, s_a?, s_hat?, s_hat_a?].
/// Inputs: obs [kB,C,H,W], action [B,A], y [B,1].
template <typename T>
struct CriticLossGraph {
  Graph<T> g;
  CriticLayout layout;
  std::size_t batch;
  NodeId l_q1, l_q2, l_qc1, l_qc2, total;

  CriticLossGraph(ParamStore<T>& store, const NetConfig& net, std::size_t B, CriticLayout lay,
                  double lambda, bool stop_grad_unmasked)
      : g(store), layout(lay), batch(B) {
    const std::size_t k = lay.branches();
    NodeId obs = g.input("obs", obs_shape<T>(net, k * B));
    NodeId act = g.input("action", {B, net.action_dim});
    NodeId y = g.input("y", {B, 1});
    NodeId e = encoder(g, "enc", net.encoder, obs);
    NodeId ak = tile_rows(g, act, k);
    NodeId q1 = critic_head(g, "critic1", net, e, ak);
    NodeId q2 = critic_head(g, "critic2", net, e, ak);
    auto pair_mse = [&](std::size_t i, NodeId t1, NodeId t2) {
      return g.add(mse(g, branch(g, q1, i, B), t1), mse(g, branch(g, q2, i, B), t2));
    };
    l_q1 = pair_mse(0, y, y);
    g.set_name(l_q1, "L_Q1");
    total = l_q1;
    if (lay.aug) {
      l_q2 = pair_mse(lay.aug_index(), y, y);
      g.set_name(l_q2, "L_Q2");
      total = g.add(total, l_q2);
    }
    if (lay.mask) {
      auto anchor = [&](NodeId q, std::size_t i) {
        NodeId b = branch(g, q, i, B);
        return stop_grad_unmasked ? g.stop_gradient(b) : b;
      };
      l_qc1 = pair_mse(lay.mask_index(), anchor(q1, 0), anchor(q2, 0));
      g.set_name(l_qc1, "L_QC1");
      NodeId qc = l_qc1;
      if (lay.aug) {
        l_qc2 = pair_mse(lay.aug_mask_index(), anchor(q1, lay.aug_index()), anchor(q2, lay.aug_index()));
        g.set_name(l_qc2, "L_QC2");
        qc = g.add(qc, l_qc2);
      }
      total = g.add(total, g.scale(qc, static_cast<T>(lambda)));
    }
    g.set_name(total, "L_Q");
  }
};

/// Soft value of s' under target networks and the current actor, plus target embeddings.
/// Inputs: obs_next [kB,C,H,W] (rows beyond B only feed `embed`), noise [B,A].
template <typename T>
struct TargetGraph {
  Graph<T> g;
  NodeId embed, value;

  TargetGraph(ParamStore<T>& store, const NetConfig& net, std::size_t B, std::size_t k) : g(store) {
    NodeId obs = g.input("obs_next", obs_shape<T>(net, k * B));
    NodeId noise = g.input("noise", {B, net.action_dim});
    embed = encoder(g, "target/enc", net.encoder, obs);
    NodeId e = branch(g, embed, 0, B);
    auto pol = policy_head(g, mlp(g, "actor", net.mlp_layers, e), net.action_dim, net.log_std);
    auto smp = squashed_sample_nodes(g, pol, noise);
    NodeId q = g.minimum(critic_head(g, "target/critic1", net, e, smp.action),
                         critic_head(g, "target/critic2", net, e, smp.action));
    value = g.sub(q, g.mul(g.exp(g.param("log_temp")), smp.log_prob));
  }
};

/// Latent dynamics objective. Inputs: obs [kB,...], action [B,A], target [kB,E], reward [B,1].
template <typename T>
struct DynamicsLossGraph {
  Graph<T> g;
  std::size_t branches;
  NodeId l_te, l_te_a, total;

  DynamicsLossGraph(ParamStore<T>& store, const NetConfig& net, std::size_t B, std::size_t k)
      : g(store), branches(k) {
    NodeId obs = g.input("obs", obs_shape<T>(net, k * B));
    NodeId act = g.input("action", {B, net.action_dim});
    NodeId target = g.input("target", {k * B, net.encoder.embed_dim});
    NodeId reward = g.input("reward", {B, 1});
    NodeId h = g.concat(encoder(g, "enc", net.encoder, obs), tile_rows(g, act, k), 1);
    NodeId p = mlp(g, "dyn.p", net.dyn_layers, h);
    NodeId r = mlp(g, "dyn.r", net.dyn_layers, h);
    auto term = [&](std::size_t i) {
      NodeId pe = g.sum_rows(g.square(g.sub(branch(g, target, i, B), branch(g, p, i, B))));
      NodeId re = g.square(g.sub(reward, branch(g, r, i, B)));
      return g.mean(g.add(pe, re));
    };
    l_te = term(0);
    g.set_name(l_te, "L_Te");
    total = l_te;
    if (k > 1) {
      l_te_a = term(1);
      g.set_name(l_te_a, "L_Te_a");
      total = g.add(total, l_te_a);
    }
    g.set_name(total, "L_T");
  }
};

/// Actor and temperature objectives on fixed embeddings.
/// Inputs: embed [kB,E] (row block 1 = augmented view), noise [B,A].
template <typename T>
struct ActorLossGraph {
  Graph<T> g;
  NodeId l_pi1, l_pi2, total, temp_loss, log_prob, kl_rows;
  bool consistency;

  ActorLossGraph(ParamStore<T>& store, const NetConfig& net, std::size_t B, bool policy_consistency,
                 double beta)
      : g(store), consistency(policy_consistency) {
    const std::size_t k = policy_consistency ? 2 : 1, A = net.action_dim;
    NodeId embed = g.input("embed", {k * B, net.encoder.embed_dim});
    NodeId noise = g.input("noise", {B, A});
    NodeId raw = mlp(g, "actor", net.mlp_layers, embed);
    auto pol = policy_head(g, branch(g, raw, 0, B), A, net.log_std);
    auto smp = squashed_sample_nodes(g, pol, noise);
    log_prob = smp.log_prob;
    NodeId e = branch(g, embed, 0, B);
    NodeId q = g.minimum(critic_head(g, "critic1", net, e, smp.action),
                         critic_head(g, "critic2", net, e, smp.action));
    NodeId temp = g.exp(g.param("log_temp"));
    l_pi1 = g.mean(g.sub(g.mul(g.stop_gradient(temp), smp.log_prob), q));
    g.set_name(l_pi1, "L_pi1");
    total = l_pi1;
    if (policy_consistency) {
      auto pol_a = policy_head(g, branch(g, raw, 1, B), A, net.log_std);
      kl_rows = diag_gaussian_kl_nodes(g, pol, pol_a);
      l_pi2 = g.mean(kl_rows);
      g.set_name(l_pi2, "L_pi2");
      total = g.add(total, g.scale(l_pi2, static_cast<T>(beta)));
    }
    g.set_name(total, "L_pi");
    // Target entropy is -A.
    NodeId slack = g.stop_gradient(g.add_scalar(g.scale(smp.log_prob, T(-1)), static_cast<T>(A)));
    temp_loss = g.mean(g.mul(temp, slack));
    g.set_name(temp_loss, "L_temp");
  }
};

/// Current-encoder embeddings. Input: obs [n,...].
template <typename T>
struct EmbedGraph {
  Graph<T> g;
  NodeId embed;
  EmbedGraph(ParamStore<T>& store, const NetConfig& net, std::size_t n) : g(store) {
    embed = encoder(g, "enc", net.encoder, g.input("obs", obs_shape<T>(net, n)));
  }
};

/// Pre-squash policy distribution. Input: obs [n,...].
template <typename T>
struct PolicyGraph {
  Graph<T> g;
  PolicyNodes<T> pol;
  PolicyGraph(ParamStore<T>& store, const NetConfig& net, std::size_t n) : g(store) {
    NodeId e = encoder(g, "enc", net.encoder, g.input("obs", obs_shape<T>(net, n)));
    pol = policy_head(g, mlp(g, "actor", net.mlp_layers, e), net.action_dim, net.log_std);
  }
};

/// Sum over rows of Q1(f(obs), action); its input gradient is the per-sample saliency.
/// Inputs: obs [n,...], action [n,A].
template <typename T>
struct SaliencyGraph {
  Graph<T> g;
  NodeId root;
  SaliencyGraph(ParamStore<T>& store, const NetConfig& net, std::size_t n) : g(store) {
    NodeId obs = g.input("obs", obs_shape<T>(net, n));
    NodeId act = g.input("action", {n, net.action_dim});
    root = g.sum(critic_head(g, "critic1", net, encoder(g, "enc", net.encoder, obs), act));
  }
};

}  // namespace scpl
