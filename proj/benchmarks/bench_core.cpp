#include <benchmark/benchmark.h>

#include "evoplan/gridworld.hpp"
#include "evoplan/nn.hpp"
#include "evoplan/planner.hpp"
#include "evoplan/replay.hpp"
#include "evoplan/rssm.hpp"

using namespace evoplan;

namespace {

replay::ReplayBuffer make_buffer(const grid::GridWorld& env, int episodes, int min_len) {
  replay::ReplayBuffer buffer(1000000);
  Rng policy(1);
  std::uint64_t seed = 1;
  while (static_cast<int>(buffer.episode_count()) < episodes) {
    auto [state, obs] = env.reset(seed++);
    replay::EpisodeRecord e;
    e.observations.push_back(obs);
    e.actions.push_back(0);
    e.rewards.push_back(0.0f);
    e.done_flags.push_back(false);
    while (!state.terminal) {
      const auto a = static_cast<grid::Action>(policy.uniform_int(grid::kActionCount));
      e.actions.back() = static_cast<int>(a);
      auto [next, res] = env.step(state, a);
      state = next;
      e.observations.push_back(std::move(res.observation));
      e.actions.push_back(0);
      e.rewards.push_back(res.reward);
      e.done_flags.push_back(res.done);
    }
    if (static_cast<int>(e.length()) >= min_len) buffer.push(std::move(e));
  }
  return buffer;
}

void BM_GridStep(benchmark::State& state) {
  const grid::GridWorld env({true, false}, grid::GridLayout::default_layout());
  auto [s, obs] = env.reset(1);
  Rng rng(2);
  for (auto _ : state) {
    if (s.terminal) s = env.reset(1).first;
    benchmark::DoNotOptimize(env.advance(s, static_cast<grid::Action>(rng.uniform_int(4))));
  }
}
BENCHMARK(BM_GridStep);

void BM_RenderGlobal(benchmark::State& state) {
  grid::RenderConfig r;
  r.global_out = static_cast<int>(state.range(0));
  const grid::GridWorld env({false, false}, grid::GridLayout::default_layout(), r);
  auto [s, obs] = env.reset(1);
  for (auto _ : state) benchmark::DoNotOptimize(env.render_global(s));
}
BENCHMARK(BM_RenderGlobal)->Arg(32)->Arg(64);

void BM_EncodeBatch(benchmark::State& state) {
  Rng rng(3);
  rssm::Model<float> m(rssm::ModelConfig::desk(false));
  m.init(rng);
  const int n = static_cast<int>(state.range(0));
  Tensor<float> obs({n, 3, 32, 32});
  for (auto& v : obs.data) v = static_cast<float>(rng.uniform());
  for (auto _ : state) {
    diff::Graph<float> g(false);
    benchmark::DoNotOptimize(m.encode(g, g.input_view(obs)));
  }
}
BENCHMARK(BM_EncodeBatch)->Arg(16)->Arg(320);

void BM_TrainEpochDesk(benchmark::State& state) {
  Rng rng(4);
  rssm::Model<float> m(rssm::ModelConfig::desk(false));
  m.init(rng);
  const grid::GridWorld env({false, false}, grid::GridLayout::default_layout(),
                            grid::RenderConfig{24, 32, 9});
  replay::ReplayBuffer buffer = make_buffer(env, 5, 20);
  diff::Adam<float> opt(m.params());
  Rng trng(5);
  for (auto _ : state)
    benchmark::DoNotOptimize(rssm::train_epoch(m, buffer, opt, trng, 16, 20));
}
BENCHMARK(BM_TrainEpochDesk)->Unit(benchmark::kMillisecond);

void BM_PlanDesk(benchmark::State& state) {
  Rng rng(6);
  rssm::Model<float> m(rssm::ModelConfig::desk(false));
  m.init(rng);
  const rssm::LatentState<float> start = m.initial_state(1);
  const rssm::RssmForwardModel fm(m, start);
  plan::PlannerConfig cfg;
  cfg.candidates = 64;
  cfg.threads = static_cast<int>(state.range(0));
  Rng prng(7);
  std::uint64_t step = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(plan::plan(fm, std::nullopt, cfg, prng, step++));
}
BENCHMARK(BM_PlanDesk)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_SampleBatch(benchmark::State& state) {
  const grid::GridWorld env({false, false}, grid::GridLayout::default_layout(),
                            grid::RenderConfig{24, 32, 9});
  replay::ReplayBuffer buffer = make_buffer(env, 10, 20);
  Rng rng(8);
  for (auto _ : state) benchmark::DoNotOptimize(buffer.sample_batch(16, 20, rng));
}
BENCHMARK(BM_SampleBatch);

}  // namespace

BENCHMARK_MAIN();
