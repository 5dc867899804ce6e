#include <benchmark/benchmark.h>

#include "scpl/agent.hpp"
#include "scpl/bound.hpp"
#include "scpl/config.hpp"
#include "scpl/replay.hpp"
#include "scpl/saliency.hpp"

namespace {

using namespace scpl;

RunConfig desk_config(const std::string& preset) {
  RunConfig c;
  apply_config_entry(c, "env.frame_size", "16");
  apply_config_entry(c, "agent.preset", preset);
  apply_config_entry(c, "agent.batch_size", "32");
  apply_config_entry(c, "net.layers", "2");
  apply_config_entry(c, "net.filters", "16");
  apply_config_entry(c, "net.embed_dim", "32");
  apply_config_entry(c, "net.hidden", "64");
  c.sync_geometry();
  return c;
}

void BM_EnvStep(benchmark::State& state) {
  EnvConfig ec;
  ec.frame_size = static_cast<std::size_t>(state.range(0));
  PixelPointMass env(ec);
  const auto setting = PerturbSetting::parse("noise_video");
  env.reset(0, setting);
  const double a[2] = {0.3, -0.2};
  std::uint64_t episode = 0;
  for (auto _ : state) {
    auto r = env.step(a);
    if (r.done) env.reset(++episode, setting);
    benchmark::DoNotOptimize(r.reward);
  }
}
BENCHMARK(BM_EnvStep)->Arg(16)->Arg(32);

void BM_RhoQuantileMask(benchmark::State& state) {
  const std::size_t side = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  GradMap map;
  map.height = map.width = side;
  map.values.resize(side * side);
  for (auto& v : map.values) v = rng.uniform(0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(rho_quantile_binarize(map, 0.95));
}
BENCHMARK(BM_RhoQuantileMask)->Arg(16)->Arg(32)->Arg(84);

void BM_ExactEval(benchmark::State& state) {
  Rng rng(11);
  const auto inst = random_instance(InstanceSpec{}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_bounds(inst.mdp, inst.pi_o, inst.pi_p));
}
BENCHMARK(BM_ExactEval);

void BM_AgentUpdate(benchmark::State& state, const std::string& preset) {
  const auto cfg = desk_config(preset);
  Agent agent(cfg.agent, cfg.augment, 0);
  ReplayBuffer buffer(256, cfg.env.channels, cfg.env.frame_size, 2);
  PixelPointMass env(cfg.env);
  Rng rng(5);
  Observation obs = env.reset(0, PerturbSetting::parse("clean"));
  for (std::size_t i = 0; i < 256; ++i) {
    const std::vector<float> a = {static_cast<float>(rng.uniform(-1, 1)), static_cast<float>(rng.uniform(-1, 1))};
    const std::vector<double> ad(a.begin(), a.end());
    auto r = env.step(ad);
    quantize_observation(r.obs);
    buffer.add(obs, a, r.reward, r.captured, r.obs);
    obs = r.done ? env.reset(i, PerturbSetting::parse("clean")) : r.obs;
    quantize_observation(obs);
  }
  for (auto _ : state) benchmark::DoNotOptimize(agent.update(buffer));
}
BENCHMARK_CAPTURE(BM_AgentUpdate, sac, std::string("sac"))->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_AgentUpdate, scpl, std::string("scpl"))->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
