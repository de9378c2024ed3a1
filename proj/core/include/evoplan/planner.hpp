#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "evoplan/gridworld.hpp"
#include "evoplan/rng.hpp"

namespace evoplan::plan {

using grid::Action;
using ActionSequence = std::vector<Action>;

struct PlannerConfig {
  int horizon = 20;
  int candidates = 300;
  int generations = 1;
  double mutation_rate = 0.5;
  bool shift_buffer = true;
  int samples = 1;  // Monte Carlo rollouts averaged per fitness
  int threads = 1;  // worker threads for candidate evaluation

  void validate() const;
};

// Forward model bound to the current decision state. rollout_return is the
// sum of predicted rewards over the whole sequence; implementations must be
// const-thread-safe and draw any stochasticity from a stream derived from
// noise_key so that evaluation order cannot change results.
class ForwardModel {
 public:
  virtual ~ForwardModel() = default;
  virtual double rollout_return(std::span<const Action> actions,
                                std::uint64_t noise_key) const = 0;

  // Scores a fixed chunk of candidates. Models that can vectorize rollouts
  // override this; results must depend only on the chunk contents and keys,
  // never on which worker ran it.
  virtual void rollout_returns(std::span<const ActionSequence> chunk,
                               std::span<const std::uint64_t> noise_keys,
                               std::span<double> out) const {
    for (size_t i = 0; i < chunk.size(); ++i) out[i] = rollout_return(chunk[i], noise_keys[i]);
  }
};

// Each position i.i.d. uniform over the four actions.
ActionSequence sample_uniform_sequence(int horizon, Rng& rng);

// Each gene independently resampled uniformly (over all actions, so a
// resample may repeat the old gene) with probability rate, else copied.
ActionSequence mutate(const ActionSequence& seq, double rate, Rng& rng);

// Shift left by one, append a fresh uniform action.
ActionSequence shift_buffer(const ActionSequence& seq, Rng& rng);

// Fitness per candidate, averaged over `samples` rollouts with noise keys
// mix64(plan_key, candidate_base + index, sample). Serial and concurrent
// evaluation produce identical values.
std::vector<double> evaluate(std::span<const ActionSequence> candidates, const ForwardModel& model,
                             std::uint64_t plan_key, std::uint64_t candidate_base, int samples,
                             int threads);

struct PlanResult {
  Action action;
  ActionSequence best;
  double best_fitness = 0.0;
  int evaluations = 0;
  // mean normalized Hamming distance of evaluated candidates to the winner
  double diversity = 0.0;
};

// One rolling-horizon decision: seed from the shifted previous plan (or a
// fresh uniform sequence), evaluate seed plus N-1 mutants per generation,
// keep the incumbent unless strictly beaten (ties go to the lowest
// candidate index), and return the first action of the final best.
PlanResult plan(const ForwardModel& model, const std::optional<ActionSequence>& previous,
                const PlannerConfig& config, Rng& rng, std::uint64_t plan_key);

}  // namespace evoplan::plan
