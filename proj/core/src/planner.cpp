#include "evoplan/planner.hpp"

#include <atomic>
#include <stdexcept>
#include <thread>

namespace evoplan::plan {

void PlannerConfig::validate() const {
  if (horizon < 1 || candidates < 1 || generations < 1 || samples < 1 || threads < 1)
    throw std::invalid_argument("planner config: horizon/candidates/generations/samples/threads must be >= 1");
  if (mutation_rate < 0.0 || mutation_rate > 1.0)
    throw std::invalid_argument("planner config: mutation_rate must lie in [0,1]");
}

ActionSequence sample_uniform_sequence(int horizon, Rng& rng) {
  if (horizon < 1) throw std::invalid_argument("sample_uniform_sequence: horizon must be >= 1");
  ActionSequence seq(static_cast<size_t>(horizon));
  for (auto& a : seq) a = static_cast<Action>(rng.uniform_int(grid::kActionCount));
  return seq;
}

ActionSequence mutate(const ActionSequence& seq, double rate, Rng& rng) {
  if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("mutate: rate must lie in [0,1]");
  ActionSequence out = seq;
  for (auto& a : out)
    if (rng.uniform() < rate) a = static_cast<Action>(rng.uniform_int(grid::kActionCount));
  return out;
}

ActionSequence shift_buffer(const ActionSequence& seq, Rng& rng) {
  ActionSequence out(seq.size());
  std::copy(seq.begin() + 1, seq.end(), out.begin());
  out.back() = static_cast<Action>(rng.uniform_int(grid::kActionCount));
  return out;
}

namespace {

// Candidates are scored in fixed-size chunks so results are a function of
// the candidate list alone: a chunk's fitness values are identical whether
// chunks run serially or on any number of workers.
constexpr size_t kEvalChunk = 16;

}  // namespace

std::vector<double> evaluate(std::span<const ActionSequence> candidates, const ForwardModel& model,
                             std::uint64_t plan_key, std::uint64_t candidate_base, int samples,
                             int threads) {
  const size_t n = candidates.size();
  std::vector<double> fitness(n, 0.0);
  std::vector<std::uint64_t> keys(n);

  const size_t chunks = (n + kEvalChunk - 1) / kEvalChunk;
  auto eval_chunk = [&](size_t c, std::vector<double>& acc_buf) {
    const size_t begin = c * kEvalChunk;
    const size_t count = std::min(kEvalChunk, n - begin);
    for (int m = 0; m < samples; ++m) {
      for (size_t i = 0; i < count; ++i)
        keys[begin + i] = mix64(plan_key, mix64(candidate_base + begin + i, m));
      model.rollout_returns(candidates.subspan(begin, count),
                            std::span<const std::uint64_t>(keys).subspan(begin, count),
                            std::span<double>(acc_buf).subspan(0, count));
      for (size_t i = 0; i < count; ++i) fitness[begin + i] += acc_buf[i];
    }
    for (size_t i = 0; i < count; ++i) fitness[begin + i] /= samples;
  };

  const int workers = std::min<int>(threads, static_cast<int>(chunks));
  if (workers <= 1) {
    std::vector<double> buf(kEvalChunk);
    for (size_t c = 0; c < chunks; ++c) eval_chunk(c, buf);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        std::vector<double> buf(kEvalChunk);
        for (size_t c = next.fetch_add(1); c < chunks; c = next.fetch_add(1)) eval_chunk(c, buf);
      });
    for (auto& t : pool) t.join();
  }
  return fitness;
}

PlanResult plan(const ForwardModel& model, const std::optional<ActionSequence>& previous,
                const PlannerConfig& config, Rng& rng, std::uint64_t plan_key) {
  config.validate();
  const bool reuse = previous && config.shift_buffer &&
                     previous->size() == static_cast<size_t>(config.horizon);
  ActionSequence seed =
      reuse ? shift_buffer(*previous, rng) : sample_uniform_sequence(config.horizon, rng);

  ActionSequence best = seed;
  double best_fitness = 0.0;
  bool best_valid = false;
  int evaluated = 0;

  for (int gen = 0; gen < config.generations; ++gen) {
    std::vector<ActionSequence> fresh;
    if (gen == 0) fresh.push_back(best);  // incumbent scored once, in generation 0
    const int mutants = config.candidates - 1;
    for (int i = 0; i < mutants; ++i) fresh.push_back(mutate(best, config.mutation_rate, rng));

    const std::vector<double> fitness =
        evaluate(fresh, model, plan_key, static_cast<std::uint64_t>(evaluated), config.samples,
                 config.threads);
    for (size_t i = 0; i < fresh.size(); ++i) {
      if (!best_valid || fitness[i] > best_fitness) {
        best_fitness = fitness[i];
        best = fresh[i];
        best_valid = true;
      }
    }
    evaluated += static_cast<int>(fresh.size());
  }

  return PlanResult{best.front(), best, best_fitness, evaluated};
}

}  // namespace evoplan::plan
