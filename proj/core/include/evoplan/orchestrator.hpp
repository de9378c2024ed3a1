#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evoplan/gridworld.hpp"
#include "evoplan/planner.hpp"
#include "evoplan/replay.hpp"
#include "evoplan/rssm.hpp"

namespace evoplan::orch {

// End-to-end run configuration. File format: flat UTF-8 key=value lines
// ('#' starts a comment); CLI flags override file values. The desk profile
// swaps in the reduced model dimensions and its smaller batch/candidate
// defaults, any of which explicit keys may override.
struct RunConfig {
  grid::TaskVariant variant;
  std::string layout_path;  // empty -> built-in default layout
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int episodes = 500;
  int seed_episodes = 5;
  int epochs_per_phase = 100;
  int batches_per_epoch = 1;
  std::string profile = "full";
  plan::PlannerConfig planner;
  std::string out_dir = "out";
  int batch_size = 50;
  int seq_length = 20;
  double learning_rate = 6e-4;
  double adam_epsilon = 1e-4;
  double grad_clip = 1000.0;
  std::int64_t buffer_capacity = 1000000;
  bool dump_last_episode = false;

  void validate() const;
  void apply(const std::string& key, const std::string& value);
  static RunConfig load(const std::string& path);

  grid::GridLayout layout() const;
  grid::RenderConfig render_config() const;
  rssm::ModelConfig model_config() const;

  static grid::TaskVariant parse_variant(const std::string& name);
  static std::string variant_name(grid::TaskVariant v);
};

// Full agent loop for every configured seed: seed episodes with a random
// policy, then alternating train/plan-act phases. Writes per-seed
// metrics_seed<k>.csv, loss_seed<k>.csv and checkpoint_seed<k>.ckpt under
// out_dir (plus episode_seed<k>.{pix,csv} when dump_last_episode is set).
void run(const RunConfig& config);

// Collects one seed's per-episode returns (convenience for tests; identical
// to what run() writes for that seed).
struct SeedRunResult {
  std::vector<double> returns;
  std::vector<int> steps;
};
SeedRunResult run_seed(const RunConfig& config, std::uint64_t seed);

// Aggregates metrics_seed*.csv files in a directory into a per-episode
// mean/std summary CSV (population standard deviation across seeds).
void summarize(const std::string& in_dir, const std::string& out_file);

// Writes paired actual/reconstructed frames of an episode as binary PPM
// images: frame_NNNN_actual.ppm / frame_NNNN_recon.ppm.
void dump_reconstructions(const rssm::Model<float>& model, const replay::EpisodeRecord& episode,
                          const std::string& out_dir);

// Mean return of a uniform-random policy (no rendering).
double random_baseline(grid::TaskVariant variant, const grid::GridLayout& layout, int episodes,
                       std::uint64_t seed);

void write_ppm(const Tensor<float>& image, const std::string& path);

}  // namespace evoplan::orch
