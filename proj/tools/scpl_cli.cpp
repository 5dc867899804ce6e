// scpl: train, evaluate and inspect agents; verify the tabular performance bound.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "scpl/bound.hpp"
#include "scpl/harness.hpp"

namespace {

using namespace scpl;

std::optional<std::string> env_var(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

std::uint64_t parse_seed(const std::string& s, const char* origin) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(std::string("invalid seed '") + s + "' from " + origin);
  }
}

std::vector<double> parse_gammas(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double g = 0;
    try {
      g = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw Error("invalid gamma '" + item + "'");
    out.push_back(g);
  }
  if (out.empty()) throw Error("--gamma needs at least one value");
  return out;
}

int run_train(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::optional<std::string>& out, const std::optional<std::string>& resume,
              const std::vector<std::string>& overrides) {
  RunConfig cfg = load_run_config(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  // Precedence: command line, then environment, then config file.
  if (seed) cfg.seed = *seed;
  else if (auto s = env_var("SCPL_SEED")) cfg.seed = parse_seed(*s, "SCPL_SEED");
  if (out) cfg.output_dir = *out;
  else if (auto o = env_var("SCPL_OUT")) cfg.output_dir = *o;
  cfg.sync_geometry();

  TrainOptions opts;
  if (resume) opts.resume = *resume;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train(cfg, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "trained " << res.env_steps << " env steps, " << res.updates << " updates in "
            << secs << " s -> " << res.dir.string() << "\n";
  for (const auto& e : res.last_eval)
    std::cerr << "  " << e.setting << ": return " << e.mean_return << ", action KL " << e.action_kl
              << ", AUC " << e.attention.auc << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& setting_name, std::size_t episodes,
             std::uint64_t seed, std::size_t stride) {
  const auto loaded = load_agent(load_checkpoint(checkpoint));
  const auto& cfg = loaded.config;
  const auto setting = PerturbSetting::parse(setting_name, cfg.perturb_severity, cfg.perturb_seed);
  const auto r = evaluate(*loaded.agent, cfg.env, setting, episodes, seed, stride);
  std::cout << "setting,episodes,states,mean_return,action_kl,auc,acc,f1,precision,recall\n"
            << csv_field(r.setting) << ',' << r.episodes << ',' << r.states << ','
            << format_double(r.mean_return) << ',' << format_double(r.action_kl) << ','
            << format_double(r.attention.auc) << ',' << format_double(r.attention.acc) << ','
            << format_double(r.attention.f1) << ',' << format_double(r.attention.precision) << ','
            << format_double(r.attention.recall) << "\n";
  return 0;
}

int run_verify(std::size_t count, const std::string& gammas, std::uint64_t seed,
               const std::string& out, bool identical, double corrupt) {
  BoundOptions opts;
  opts.corrupt_offset = corrupt;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_bound_suite(count, parse_gammas(gammas), seed, opts, identical);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ofstream f(out, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + out + "' for writing");
  f << bound_csv_header() << "\r\n";
  for (const auto& r : rows) f << bound_csv_row(r) << "\r\n";
  if (!f) throw IoError("write failed for '" + out + "'");

  const auto s = summarize(rows);
  std::cerr << s.instances << " instances in " << secs << " s: " << s.tv_violations
            << " TV-bound violations, " << s.kl_violations << " KL-bound violations, "
            << s.pinsker_violations << " Pinsker, " << s.lemma1_violations << " Lemma 1 (max residual "
            << s.max_lemma1_residual << "), " << s.lemma2_violations << " Lemma 2\n";
  return s.clean() ? 0 : 1;
}

int run_saliency_dump(const std::string& checkpoint, const std::string& setting_name,
                      const std::string& out, std::size_t states, std::uint64_t seed) {
  const auto loaded = load_agent(load_checkpoint(checkpoint));
  const auto& cfg = loaded.config;
  const auto setting = PerturbSetting::parse(setting_name, cfg.perturb_severity, cfg.perturb_seed);
  const auto n = dump_saliency(*loaded.agent, cfg.env, setting, seed, states, out);
  std::cerr << "wrote " << n << " states to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency-guided consistent policy learning lab"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "Train an agent from a config file");
  std::string config_path;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> train_out, resume;
  std::vector<std::string> overrides;
  train_cmd->add_option("--config", config_path, "Run configuration (key = value lines)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", train_seed, "Run seed (overrides SCPL_SEED and the config)");
  train_cmd->add_option("--out", train_out, "Output directory (overrides SCPL_OUT and the config)");
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint of the same run")->check(CLI::ExistingFile);
  train_cmd->add_option("--set", overrides, "Extra key=value config entries");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one perturbation setting");
  std::string eval_ckpt, eval_setting;
  std::size_t eval_episodes = 10, eval_stride = 10;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--setting", eval_setting, "clean, color_shift or noise_video")->required();
  eval_cmd->add_option("--episodes", eval_episodes)->required();
  eval_cmd->add_option("--seed", eval_seed, "Episode i uses env seed seed + i");
  eval_cmd->add_option("--saliency-stride", eval_stride, "Attention metrics on every k-th state");

  auto* verify_cmd = app.add_subcommand("verify", "Check the policy-divergence bound on random tabular MDPs");
  std::size_t count = 1000;
  std::string gammas = "0.9,0.99", verify_out;
  std::uint64_t verify_seed = 0;
  bool identical = false;
  double corrupt = 0.0;
  verify_cmd->add_option("--count", count);
  verify_cmd->add_option("--gamma", gammas, "Comma-separated discount factors, cycled over instances");
  verify_cmd->add_option("--seed", verify_seed);
  verify_cmd->add_option("--out", verify_out, "CSV report path")->required();
  verify_cmd->add_flag("--identical", identical, "Use pi_p = pi_o in every instance");
  verify_cmd->add_option("--test-corrupt-bound", corrupt, "Subtract this from both bounds (negative control)")
      ->group("");

  auto* dump_cmd = app.add_subcommand("saliency-dump", "Write saliency maps and masks as PGM files");
  std::string dump_ckpt, dump_setting, dump_out;
  std::size_t dump_states = 8;
  std::uint64_t dump_seed = 0;
  dump_cmd->add_option("--checkpoint", dump_ckpt)->required()->check(CLI::ExistingFile);
  dump_cmd->add_option("--setting", dump_setting)->required();
  dump_cmd->add_option("--out", dump_out)->required();
  dump_cmd->add_option("--states", dump_states, "Number of consecutive states to dump");
  dump_cmd->add_option("--seed", dump_seed, "Episode seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(config_path, train_seed, train_out, resume, overrides);
    if (*eval_cmd) return run_eval(eval_ckpt, eval_setting, eval_episodes, eval_seed, eval_stride);
    if (*verify_cmd) return run_verify(count, gammas, verify_seed, verify_out, identical, corrupt);
    if (*dump_cmd) return run_saliency_dump(dump_ckpt, dump_setting, dump_out, dump_states, dump_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
