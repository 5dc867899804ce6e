#include "scpl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace scpl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean '" + v + "' for key '" + key + "' (use true/false)");
}

template <typename N>
std::string fmt_number(N v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename N, typename Acc>
Field num(std::string key, Acc acc) {
  return Field{key,
               [acc, key](RunConfig& c, const std::string& v) { acc(c) = parse_number<N>(key, v); },
               [acc](const RunConfig& c) { return fmt_number<N>(acc(const_cast<RunConfig&>(c))); }};
}

template <typename Acc>
Field flag(std::string key, Acc acc) {
  return Field{key, [acc, key](RunConfig& c, const std::string& v) { acc(c) = parse_bool(key, v); },
               [acc](const RunConfig& c) {
                 return std::string(acc(const_cast<RunConfig&>(c)) ? "true" : "false");
               }};
}

#define SCPL_SIZE(key, member) num<std::size_t>(key, [](RunConfig& c) -> std::size_t& { return c.member; })
#define SCPL_U64(key, member) num<std::uint64_t>(key, [](RunConfig& c) -> std::uint64_t& { return c.member; })
#define SCPL_REAL(key, member) num<double>(key, [](RunConfig& c) -> double& { return c.member; })
#define SCPL_FLAG(key, member) flag(key, [](RunConfig& c) -> bool& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      SCPL_U64("run.seed", seed),
      Field{"run.output_dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; },
            [](const RunConfig& c) { return c.output_dir; }},
      SCPL_SIZE("run.total_env_steps", total_env_steps),
      SCPL_SIZE("run.init_steps", init_steps),
      SCPL_SIZE("run.update_every", update_every),
      SCPL_SIZE("run.eval_every", eval_every),
      SCPL_SIZE("run.eval_episodes", eval_episodes),
      SCPL_SIZE("run.saliency_stride", saliency_stride),
      SCPL_FLAG("run.log_losses", log_losses),

      SCPL_SIZE("env.frame_size", env.frame_size),
      SCPL_SIZE("env.channels", env.channels),
      SCPL_SIZE("env.episode_length", env.episode_length),
      SCPL_SIZE("env.action_repeat", env.action_repeat),
      SCPL_REAL("env.damping", env.damping),
      SCPL_REAL("env.accel", env.accel),
      SCPL_REAL("env.capture_radius", env.capture_radius),
      SCPL_REAL("env.capture_bonus", env.capture_bonus),
      Field{"env.train_setting", [](RunConfig& c, const std::string& v) { c.train_setting = v; },
            [](const RunConfig& c) { return c.train_setting; }},
      Field{"env.eval_settings",
            [](RunConfig& c, const std::string& v) { c.eval_settings = split_list(v); },
            [](const RunConfig& c) { return join_list(c.eval_settings); }},
      SCPL_REAL("env.perturb_severity", perturb_severity),
      SCPL_U64("env.perturb_seed", perturb_seed),

      SCPL_REAL("agent.gamma", agent.gamma),
      SCPL_REAL("agent.lambda", agent.lambda),
      SCPL_REAL("agent.beta", agent.beta),
      SCPL_REAL("agent.rho", agent.rho),
      SCPL_SIZE("agent.batch_size", agent.batch_size),
      SCPL_REAL("agent.lr_actor", agent.lr_actor),
      SCPL_REAL("agent.lr_critic", agent.lr_critic),
      SCPL_REAL("agent.lr_temp", agent.lr_temp),
      SCPL_SIZE("agent.target_update_freq", agent.target_update_freq),
      SCPL_SIZE("agent.dynamics_update_freq", agent.dynamics_update_freq),
      SCPL_SIZE("agent.buffer_capacity", agent.buffer_capacity),
      SCPL_REAL("agent.tau_critic", agent.tau_critic),
      SCPL_REAL("agent.tau_encoder", agent.tau_encoder),
      SCPL_FLAG("agent.stop_grad_unmasked", agent.stop_grad_unmasked),
      Field{"agent.saliency_mode",
            [](RunConfig& c, const std::string& v) {
              if (v == "guided") c.agent.saliency_mode = SaliencyMode::Guided;
              else if (v == "vanilla") c.agent.saliency_mode = SaliencyMode::Vanilla;
              else throw ConfigError("agent.saliency_mode must be guided or vanilla, got '" + v + "'");
            },
            [](const RunConfig& c) {
              return std::string(c.agent.saliency_mode == SaliencyMode::Guided ? "guided" : "vanilla");
            }},
      SCPL_FLAG("agent.aug_critic", agent.toggles.aug_critic),
      SCPL_FLAG("agent.saliency_consistency", agent.toggles.saliency_consistency),
      SCPL_FLAG("agent.dynamics", agent.toggles.dynamics),
      SCPL_FLAG("agent.policy_consistency", agent.toggles.policy_consistency),

      SCPL_SIZE("net.layers", agent.net.encoder.layers),
      SCPL_SIZE("net.filters", agent.net.encoder.filters),
      SCPL_SIZE("net.kernel", agent.net.encoder.kernel),
      SCPL_SIZE("net.first_stride", agent.net.encoder.first_stride),
      SCPL_SIZE("net.embed_dim", agent.net.encoder.embed_dim),
      SCPL_FLAG("net.layer_norm", agent.net.encoder.layer_norm),
      SCPL_SIZE("net.hidden", agent.net.hidden),
      SCPL_SIZE("net.mlp_layers", agent.net.mlp_layers),
      SCPL_SIZE("net.dyn_layers", agent.net.dyn_layers),
      SCPL_REAL("net.init_temperature", agent.net.init_temperature),
      SCPL_REAL("net.log_std_min", agent.net.log_std.min),
      SCPL_REAL("net.log_std_max", agent.net.log_std.max),

      Field{"augment.kind",
            [](RunConfig& c, const std::string& v) { c.augment.kind = parse_augment_kind(v); },
            [](const RunConfig& c) { return augment_kind_name(c.augment.kind); }},
      SCPL_REAL("augment.blend_alpha", augment.blend_alpha),
      SCPL_U64("augment.texture_bank_seed", augment.texture_bank_seed),
      SCPL_SIZE("augment.kernel_size", augment.kernel_size),
      SCPL_SIZE("augment.bank_size", augment.bank_size),
  };
  return f;
}

#undef SCPL_SIZE
#undef SCPL_U64
#undef SCPL_REAL
#undef SCPL_FLAG

}  // namespace

void RunConfig::sync_geometry() {
  agent.net.encoder.in_channels = Observation::kFrames * env.channels;
  agent.net.encoder.frame_size = env.frame_size;
}

void RunConfig::validate() const {
  if (env.frame_size < 16) throw ConfigError("env.frame_size must be at least 16");
  if (env.channels != 1 && env.channels != 3) throw ConfigError("env.channels must be 1 or 3");
  if (env.episode_length == 0 || env.action_repeat == 0)
    throw ConfigError("env.episode_length and env.action_repeat must be positive");
  if (agent.net.encoder.in_channels != Observation::kFrames * env.channels ||
      agent.net.encoder.frame_size != env.frame_size)
    throw ConfigError("encoder geometry does not match the environment (call sync_geometry)");
  PerturbSetting::parse(train_setting, perturb_severity, perturb_seed);
  for (const auto& s : eval_settings) PerturbSetting::parse(s, perturb_severity, perturb_seed);
  if (update_every == 0) throw ConfigError("run.update_every must be positive");
  if (eval_every == 0) throw ConfigError("run.eval_every must be positive");
  if (eval_episodes == 0) throw ConfigError("run.eval_episodes must be positive");
  if (saliency_stride == 0) throw ConfigError("run.saliency_stride must be positive");
  agent.validate();
  augment.validate();
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "agent.preset") {
    cfg.agent.toggles = AgentToggles::preset(value);
    return;
  }
  for (const auto& f : fields())
    if (f.key == key) {
      try {
        f.set(cfg, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError("invalid value for '" + key + "': " + e.what());
      }
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      apply_config_entry(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.sync_geometry();
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  keys.push_back("agent.preset");
  return keys;
}

}  // namespace scpl
