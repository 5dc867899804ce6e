#include "scpl/harness.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "scpl/gaussian.hpp"
#include "scpl/saliency.hpp"

namespace scpl {

namespace fs = std::filesystem;

namespace {

// Stream identifiers for mix_seed; the agent uses 1..5 internally.
constexpr std::uint64_t kExploreStream = 101;
constexpr std::uint64_t kEpisodeStream = 102;
constexpr std::uint64_t kEvalStream = 103;

const std::vector<std::string> kRngNames = {"sample", "augment", "policy", "act"};

Rng& agent_rng(Agent& agent, const std::string& name) {
  auto& r = agent.rngs();
  if (name == "sample") return r.sample;
  if (name == "augment") return r.augment;
  if (name == "policy") return r.policy;
  return r.act;
}

std::string hex(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, p);
}

double parse_hex(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error("malformed number '" + s + "' in checkpoint");
  return v;
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

Observation quantized(Observation o) {
  quantize_observation(o);
  return o;
}

/// Keeps the header and rows whose first column (an integer) is <= `limit`.
void truncate_csv(const fs::path& path, std::size_t limit) {
  std::ifstream in(path);
  if (!in) return;
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept += line + "\n";
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    std::size_t v = 0;
    std::from_chars(line.data(), line.data() + (comma == std::string::npos ? line.size() : comma), v);
    if (v <= limit) kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept;
}

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header, bool append) : path_(path) {
    const bool fresh = !append || !fs::exists(path);
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
    if (fresh) row(header);
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << csv_field(fields[i]);
    out_ << "\r\n";
    out_.flush();
    if (!out_) throw IoError("write failed for '" + path_.string() + "'");
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

std::vector<std::string> loss_columns() {
  const auto& c = StepDiagnostics::columns();
  return {c.begin() + 1, c.end()};
}

}  // namespace

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"step",     "setting", "episodes",  "mean_return", "action_kl",
                                  "auc",      "acc",     "f1",        "precision",   "recall",
                                  "updates"};
    for (const auto& l : loss_columns()) c.push_back(l);
    return c;
  }();
  return cols;
}

// ---------------------------------------------------------------- evaluation

EvalResult evaluate(Agent& agent, const EnvConfig& env_cfg, const PerturbSetting& setting,
                    std::size_t episodes, std::uint64_t seed, std::size_t saliency_stride) {
  if (episodes == 0) throw Error("evaluation needs at least one episode");
  if (saliency_stride == 0) throw Error("saliency_stride must be positive");
  const PerturbSetting clean;
  const auto range = agent.config().net.log_std;
  const SaliencyMode mode = agent.config().saliency_mode;
  PixelPointMass env(env_cfg);
  EvalResult r;
  r.setting = setting.name();
  r.episodes = episodes;
  double ret_sum = 0.0, kl_sum = 0.0;
  AttentionMetrics att;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    Observation obs = quantized(env.reset(seed + ep, setting));
    std::size_t t = 0;
    while (true) {
      const auto pol = agent.policy(obs);
      const auto ref = agent.policy(quantized(env.observe(clean)));
      kl_sum += diag_gaussian_kl(DiagGaussian(ref.mean, ref.log_std, range),
                                 DiagGaussian(pol.mean, pol.log_std, range));
      std::vector<float> action(pol.mean.size());
      for (std::size_t i = 0; i < action.size(); ++i) action[i] = static_cast<float>(std::tanh(pol.mean[i]));

      if (t % saliency_stride == 0) {
        const auto map = input_gradient_map(agent, obs, action, mode);
        const auto m = attention_metrics(rho_quantile_binarize(map, agent.config().rho), map,
                                         env.ground_truth_mask());
        att.acc += m.acc;
        att.precision += m.precision;
        att.recall += m.recall;
        att.f1 += m.f1;
        att.auc += m.auc;
        ++r.attention_states;
      }
      ++r.states;
      ++t;
      const std::vector<double> a(action.begin(), action.end());
      auto step = env.step(a);
      ret_sum += step.reward;
      if (step.done) break;
      obs = quantized(std::move(step.obs));
    }
  }
  r.mean_return = ret_sum / static_cast<double>(episodes);
  r.action_kl = kl_sum / static_cast<double>(r.states);
  if (r.attention_states > 0) {
    const double n = static_cast<double>(r.attention_states);
    r.attention = {att.acc / n, att.precision / n, att.recall / n, att.f1 / n, att.auc / n};
  }
  return r;
}

std::size_t dump_saliency(Agent& agent, const EnvConfig& env_cfg, const PerturbSetting& setting,
                          std::uint64_t seed, std::size_t states, const fs::path& dir,
                          const std::string& prefix) {
  fs::create_directories(dir);
  PixelPointMass env(env_cfg);
  Observation obs = quantized(env.reset(seed, setting));
  std::size_t written = 0;
  while (written < states) {
    const auto action = agent.act(obs, ActMode::Deterministic);
    const auto map = input_gradient_map(agent, obs, action, agent.config().saliency_mode);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%03zu", written);
    const std::string base = prefix + setting.name() + "_" + stem;
    write_frame_pnm(dir / (base + "_frame" + (obs.channels == 1 ? ".pgm" : ".ppm")), obs,
                    Observation::kFrames - 1);
    write_gradmap_pgm(dir / (base + "_saliency.pgm"), map);
    write_mask_pgm(dir / (base + "_mask.pgm"), rho_quantile_binarize(map, agent.config().rho));
    write_mask_pgm(dir / (base + "_truth.pgm"), env.ground_truth_mask());
    ++written;
    const std::vector<double> a(action.begin(), action.end());
    auto step = env.step(a);
    if (step.done) break;
    obs = quantized(std::move(step.obs));
  }
  return written;
}

// ---------------------------------------------------------------- losses

void LossAccumulator::add(const StepDiagnostics& d) {
  const auto v = d.values();
  for (std::size_t i = 1; i < v.size(); ++i) sums[i - 1] += v[i];
  ++count;
}

std::vector<double> LossAccumulator::means() const {
  std::vector<double> out(sums.size(), 0.0);
  if (count == 0) return out;
  for (std::size_t i = 0; i < sums.size(); ++i) out[i] = sums[i] / static_cast<double>(count);
  return out;
}

// ---------------------------------------------------------------- trainer

namespace {

RunConfig prepared(RunConfig c) {
  c.sync_geometry();
  c.validate();
  return c;
}

}  // namespace

Trainer::Trainer(RunConfig config)
    : config_(prepared(std::move(config))),
      train_setting_(PerturbSetting::parse(config_.train_setting, config_.perturb_severity,
                                           config_.perturb_seed)),
      env_(config_.env),
      agent_(std::make_unique<Agent>(config_.agent, config_.augment, config_.seed)),
      buffer_(config_.agent.buffer_capacity, config_.env.channels, config_.env.frame_size,
              config_.agent.net.action_dim),
      explore_(mix_seed(config_.seed, kExploreStream)) {
  begin_episode();
}

void Trainer::begin_episode() {
  obs_ = quantized(env_.reset(mix_seed(mix_seed(config_.seed, kEpisodeStream), episode_), train_setting_));
  episode_return_ = 0.0;
}

std::uint64_t Trainer::eval_seed() const { return mix_seed(config_.seed, kEvalStream); }

std::optional<StepDiagnostics> Trainer::step() {
  std::vector<float> action;
  if (env_steps_ < config_.init_steps) {
    action.resize(config_.agent.net.action_dim);
    for (auto& a : action) a = static_cast<float>(explore_.uniform(-1.0, 1.0));
  } else {
    action = agent_->act(obs_, ActMode::Stochastic);
  }
  const std::vector<double> a(action.begin(), action.end());
  auto res = env_.step(a);
  Observation next = quantized(std::move(res.obs));
  buffer_.add(obs_, action, res.reward, res.captured, next);
  episode_return_ += res.reward;
  ++env_steps_;

  std::optional<StepDiagnostics> diag;
  if (env_steps_ >= config_.init_steps && buffer_.size() >= config_.agent.batch_size &&
      env_steps_ % config_.update_every == 0) {
    diag = agent_->update(buffer_);
    for (double v : diag->values())
      if (!std::isfinite(v))
        throw NumericError("non-finite diagnostics at update " + std::to_string(diag->update));
    losses_.add(*diag);
  }

  if (res.done) {
    episode_returns_.push_back(episode_return_);
    ++episode_;
    begin_episode();
  } else {
    obs_ = std::move(next);
  }
  return diag;
}

void write_agent_state(Agent& agent, Checkpoint& ckpt) {
  for (const auto& [name, t] : agent.params().all()) ckpt.params.push_back({name, t});
  for (auto& [group, opt] : agent.optimizers()) {
    for (const auto& [name, mom] : opt->moments()) {
      ckpt.optimizer.push_back({group + "/m/" + name, mom.m});
      ckpt.optimizer.push_back({group + "/v/" + name, mom.v});
    }
    ckpt.add_text("optim." + group + ".steps", std::to_string(opt->steps()));
  }
  for (const auto& n : kRngNames) ckpt.add_text("rng." + n, agent_rng(agent, n).state());
  ckpt.add_text("agent.updates", std::to_string(agent.updates()));
}

namespace {

std::size_t parse_count(const std::string& s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error("malformed count '" + s + "' in checkpoint");
  return v;
}

void copy_into(Tensor<float>& dst, const NamedTensor& src) {
  if (dst.shape != src.value.shape)
    throw ShapeError("checkpoint tensor '" + src.name + "' has shape " + shape_str(src.value.shape) +
                     ", expected " + shape_str(dst.shape));
  dst.data = src.value.data;
}

}  // namespace

void read_agent_state(Agent& agent, const Checkpoint& ckpt) {
  if (ckpt.params.size() != agent.params().all().size())
    throw Error("checkpoint holds " + std::to_string(ckpt.params.size()) + " parameters, agent has " +
                std::to_string(agent.params().all().size()));
  for (const auto& t : ckpt.params) copy_into(agent.params().get(t.name), t);
  for (auto& [group, opt] : agent.optimizers()) {
    for (auto& [name, mom] : opt->moments()) {
      copy_into(mom.m, ckpt.optimizer_tensor(group + "/m/" + name));
      copy_into(mom.v, ckpt.optimizer_tensor(group + "/v/" + name));
    }
    opt->set_steps(parse_count(ckpt.blob_text("optim." + group + ".steps")));
  }
  for (const auto& n : kRngNames) agent_rng(agent, n).set_state(ckpt.blob_text("rng." + n));
  agent.set_updates(parse_count(ckpt.blob_text("agent.updates")));
}

Checkpoint Trainer::checkpoint() {
  Checkpoint ckpt;
  ckpt.add_text("config", to_config_text(config_));
  write_agent_state(*agent_, ckpt);
  ckpt.add_text("rng.explore", explore_.state());

  std::ostringstream tr;
  tr << env_steps_ << ' ' << episode_ << ' ' << hex(episode_return_) << ' ' << losses_.count << ' '
     << episode_returns_.size();
  for (double s : losses_.sums) tr << ' ' << hex(s);
  for (double r : episode_returns_) tr << ' ' << hex(r);
  ckpt.add_text("trainer", tr.str());
  ckpt.add_text("env", env_.save_state());
  ckpt.add_blob("replay", buffer_.serialize());
  return ckpt;
}

namespace {

// Run length and output location may change between a checkpoint and its resumption.
std::string comparable_config(const std::string& text) {
  RunConfig c = parse_run_config(text);
  c.output_dir.clear();
  c.total_env_steps = 0;
  return to_config_text(c);
}

}  // namespace

void Trainer::restore(const Checkpoint& ckpt) {
  if (comparable_config(ckpt.blob_text("config")) != comparable_config(to_config_text(config_)))
    throw Error("checkpoint was written by a run with a different configuration");
  read_agent_state(*agent_, ckpt);
  explore_.set_state(ckpt.blob_text("rng.explore"));

  const auto w = words(ckpt.blob_text("trainer"));
  const std::size_t n_loss = losses_.sums.size();
  if (w.size() < 5 + n_loss) throw Error("checkpoint trainer block is malformed");
  env_steps_ = parse_count(w[0]);
  episode_ = parse_count(w[1]);
  episode_return_ = parse_hex(w[2]);
  losses_.count = parse_count(w[3]);
  const std::size_t n_returns = parse_count(w[4]);
  if (w.size() != 5 + n_loss + n_returns) throw Error("checkpoint trainer block is malformed");
  for (std::size_t i = 0; i < n_loss; ++i) losses_.sums[i] = parse_hex(w[5 + i]);
  episode_returns_.clear();
  for (std::size_t i = 0; i < n_returns; ++i) episode_returns_.push_back(parse_hex(w[5 + n_loss + i]));

  env_.load_state(ckpt.blob_text("env"));
  obs_ = quantized(env_.observation());
  const auto& replay = ckpt.blob("replay").bytes;
  buffer_.deserialize(replay);
}

LoadedAgent load_agent(const Checkpoint& ckpt) {
  LoadedAgent out;
  out.config = parse_run_config(ckpt.blob_text("config"));
  out.config.validate();
  out.agent = std::make_unique<Agent>(out.config.agent, out.config.augment, out.config.seed);
  read_agent_state(*out.agent, ckpt);
  return out;
}

// ---------------------------------------------------------------- train

TrainResult train(const RunConfig& config, const TrainOptions& options) {
  Trainer trainer(config);
  const RunConfig& cfg = trainer.config();
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir / "checkpoints");
  fs::create_directories(dir / "saliency");
  const fs::path latest = dir / "checkpoints" / "latest.ckpt";

  if (options.resume) {
    trainer.restore(load_checkpoint(*options.resume));
    truncate_csv(dir / "metrics.csv", trainer.env_steps());
    truncate_csv(dir / "losses.csv", trainer.agent().updates());
  }
  const bool append = options.resume.has_value();
  {
    std::ofstream f(dir / "config.txt", std::ios::trunc);
    if (!f) throw IoError("cannot write '" + (dir / "config.txt").string() + "'");
    f << to_config_text(cfg);
  }
  CsvWriter metrics(dir / "metrics.csv", metrics_columns(), append);
  std::optional<CsvWriter> losses;
  if (cfg.log_losses) {
    auto header = StepDiagnostics::columns();
    losses.emplace(dir / "losses.csv", header, append);
  }
  if (!options.resume) save_checkpoint(trainer.checkpoint(), dir / "checkpoints" / "initial.ckpt");

  std::vector<PerturbSetting> settings;
  for (const auto& s : cfg.eval_settings)
    settings.push_back(PerturbSetting::parse(s, cfg.perturb_severity, cfg.perturb_seed));

  TrainResult result;
  result.dir = dir;
  while (!trainer.finished()) {
    std::optional<StepDiagnostics> diag;
    try {
      diag = trainer.step();
    } catch (const NumericError& e) {
      throw NumericError(std::string("training aborted at env step ") +
                         std::to_string(trainer.env_steps()) + ": " + e.what() +
                         "; last checkpoint kept at " + latest.string());
    }
    if (diag && losses) {
      std::vector<std::string> row;
      for (double v : diag->values()) row.push_back(format_double(v));
      losses->row(row);
    }
    const std::size_t t = trainer.env_steps();
    if (t % cfg.eval_every != 0) continue;

    const auto loss_means = trainer.losses().means();
    result.last_eval.clear();
    for (const auto& s : settings) {
      auto ev = evaluate(trainer.agent(), cfg.env, s, cfg.eval_episodes, trainer.eval_seed(),
                         cfg.saliency_stride);
      std::vector<std::string> row = {std::to_string(t),
                                      ev.setting,
                                      std::to_string(ev.episodes),
                                      format_double(ev.mean_return),
                                      format_double(ev.action_kl),
                                      format_double(ev.attention.auc),
                                      format_double(ev.attention.acc),
                                      format_double(ev.attention.f1),
                                      format_double(ev.attention.precision),
                                      format_double(ev.attention.recall),
                                      std::to_string(trainer.agent().updates())};
      for (double v : loss_means) row.push_back(format_double(v));
      metrics.row(row);
      dump_saliency(trainer.agent(), cfg.env, s, trainer.eval_seed(), 1, dir / "saliency",
                    "step" + std::to_string(t) + "_");
      result.last_eval.push_back(std::move(ev));
    }
    trainer.losses().reset();
    save_checkpoint(trainer.checkpoint(), latest);
  }
  if (trainer.env_steps() == 0 || trainer.env_steps() % cfg.eval_every != 0)
    save_checkpoint(trainer.checkpoint(), latest);
  result.env_steps = trainer.env_steps();
  result.updates = trainer.agent().updates();
  return result;
}

}  // namespace scpl
