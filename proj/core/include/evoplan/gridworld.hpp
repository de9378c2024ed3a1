#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evoplan/rng.hpp"
#include "evoplan/tensor.hpp"

namespace evoplan::grid {

enum class Action : int { up = 0, down = 1, left = 2, right = 3 };
inline constexpr int kActionCount = 4;

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

// One of the four experiment variants: with/without the random-walking
// spider, whole-grid or 3x3-neighborhood observations.
struct TaskVariant {
  bool stochastic = false;
  bool local_view = false;
};

struct GridLayout {
  int width = 7;
  int height = 7;
  std::vector<Cell> block_cells;
  Cell agent_start{0, 0};
  Cell goal_cell{6, 6};
  Cell hole_cell{6, 0};
  Cell spider_start{3, 3};

  bool in_bounds(Cell c) const { return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height; }
  bool is_block(Cell c) const;
  // Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  static GridLayout default_layout();
  // Map file: one row per line, '.'=floor '#'=block 'A'=agent 'G'=goal
  // 'H'=hole 'S'=spider.
  static GridLayout parse(const std::string& text);
  static GridLayout load(const std::string& path);
};

struct GridState {
  Cell agent_pos;
  Cell spider_pos;
  int step_count = 0;
  bool terminal = false;
  Rng rng{0};
};

// Channel-major float image in [0,1].
using Observation = Tensor<float>;

struct StepResult {
  Observation observation;
  float reward = 0.0f;
  bool done = false;
};

struct RenderConfig {
  int tile_px = 24;        // cell size on the full-resolution canvas
  int global_out = 64;     // area-averaged output size for the global view
  int local_tile_px = 9;   // cell size in the local view
};

// Palette; distinct flat colors per entity.
struct Palette {
  float floor[3] = {0.15f, 0.15f, 0.15f};
  float block[3] = {0.45f, 0.30f, 0.15f};
  float agent[3] = {0.85f, 0.85f, 0.85f};
  float goal[3] = {1.00f, 0.85f, 0.20f};
  float hole[3] = {0.00f, 0.00f, 0.00f};
  float spider[3] = {0.80f, 0.10f, 0.10f};
};

// Native simulator of the navigation task. Instances are immutable; all
// per-episode state lives in GridState, so independent episodes can run in
// parallel. Randomness (the spider walk) flows through GridState::rng.
class GridWorld {
 public:
  GridWorld(TaskVariant variant, GridLayout layout, RenderConfig render = {});

  const TaskVariant& variant() const { return variant_; }
  const GridLayout& layout() const { return layout_; }
  const RenderConfig& render_config() const { return render_; }

  std::pair<GridState, Observation> reset(std::uint64_t seed) const;

  struct Transition {
    float reward = 0.0f;
    bool done = false;
  };

  // State transition without rendering: agent moves (blocked moves keep the
  // position), then the spider takes a uniform step over its free
  // directions; goal/hole/collision terminate, step 500 times out.
  Transition advance(GridState& state, Action action) const;

  // advance + render for the configured variant.
  std::pair<GridState, StepResult> step(const GridState& state, Action action) const;

  Observation render(const GridState& state) const;
  Observation render_global(const GridState& state) const;
  Observation render_local(const GridState& state) const;

  int observation_size() const;
  static constexpr int kMaxSteps = 500;

 private:
  TaskVariant variant_;
  GridLayout layout_;
  RenderConfig render_;
  Palette palette_;
};

// Breadth-first-search distance from agent_start to goal_cell avoiding
// blocks and the hole; throws std::runtime_error when unreachable.
int shortest_path_length(const GridLayout& layout);

// Box-filter resize (exact fractional area averaging); maps constant images
// to the same constant.
Tensor<float> area_average(const Tensor<float>& image, int out_h, int out_w);

}  // namespace evoplan::grid
