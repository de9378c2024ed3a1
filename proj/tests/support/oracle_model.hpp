#pragma once

// Ground-truth simulator wrapped as a planner forward model. Rollouts run
// the full horizon the way latent-model rollouts do: once a rollout hits a
// terminal transition the state freezes and the terminal reward keeps being
// emitted, which ranks earlier goal arrivals strictly higher.

#include "evoplan/gridworld.hpp"
#include "evoplan/planner.hpp"

namespace evoplan::test {

class OracleSimModel final : public plan::ForwardModel {
 public:
  OracleSimModel(const grid::GridWorld& env, grid::GridState start)
      : env_(env), start_(std::move(start)) {}

  double rollout_return(std::span<const grid::Action> actions,
                        std::uint64_t noise_key) const override {
    grid::GridState state = start_;
    state.rng = Rng(noise_key);  // per-candidate spider stream
    double total = 0.0;
    double absorbed = 0.0;
    bool done = state.terminal;
    for (const grid::Action a : actions) {
      if (!done) {
        const auto t = env_.advance(state, a);
        total += t.reward;
        if (t.done) {
          done = true;
          absorbed = t.reward;
        }
      } else {
        total += absorbed;
      }
    }
    return total;
  }

 private:
  const grid::GridWorld& env_;
  grid::GridState start_;
};

}  // namespace evoplan::test
