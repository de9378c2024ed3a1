#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "evoplan/gridworld.hpp"
#include "evoplan/rng.hpp"
#include "evoplan/tensor.hpp"

namespace evoplan::replay {

// One episode, time-aligned: record i holds the i-th observation, the
// action taken from it, and the reward received on arriving at it (so
// rewards[0] is always 0 and the terminal record carries the final reward;
// the terminal record's action is a zero pad that no segment consumes).
struct EpisodeRecord {
  std::vector<grid::Observation> observations;
  std::vector<int> actions;
  std::vector<float> rewards;
  std::vector<bool> done_flags;

  size_t length() const { return observations.size(); }
  // Throws std::invalid_argument when the alignment invariants do not hold.
  void validate() const;
};

// Fixed-length training segment, time-major: step t of sample b lives at
// row t*batch + b. prev_actions holds one-hot encodings of the action taken
// before each observation (zero vector at an episode start).
struct SegmentBatch {
  Tensor<float> observations;  // (L*B, C, H, W)
  Tensor<float> prev_actions;  // (L*B, A)
  Tensor<float> rewards;       // (L*B)
  int batch = 0;
  int length = 0;
};

// Ring of episodes bounded by total stored steps; eviction is
// oldest-episode-first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::int64_t capacity_steps = 1000000)
      : capacity_(capacity_steps) {}

  void push(EpisodeRecord episode);

  // B segments of L contiguous steps; the episode is chosen uniformly among
  // those with length >= L, the start uniformly over valid offsets.
  // Segments never cross episode boundaries.
  SegmentBatch sample_batch(int batch, int length, Rng& rng) const;

  size_t episode_count() const { return episodes_.size(); }
  std::int64_t step_count() const { return steps_; }
  std::int64_t capacity() const { return capacity_; }
  const EpisodeRecord& episode(size_t i) const { return episodes_[i]; }
  bool has_episode_of_length(int length) const;

 private:
  std::deque<EpisodeRecord> episodes_;
  std::int64_t capacity_;
  std::int64_t steps_ = 0;
};

// On-disk episode dump: <base>.pix holds a text header "T C H W\n" followed
// by raw float32 frames; <base>.csv is the action/reward sidecar.
void dump_episode(const EpisodeRecord& episode, const std::string& base_path);
EpisodeRecord load_episode(const std::string& base_path);

}  // namespace evoplan::replay
