#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "evoplan/gridworld.hpp"

using namespace evoplan;
using namespace evoplan::grid;

namespace {

GridWorld make_env(bool stochastic, bool local, int global_out = 64) {
  RenderConfig r;
  r.global_out = global_out;
  return GridWorld({stochastic, local}, GridLayout::default_layout(), r);
}

}  // namespace

TEST_CASE("reset: observation shapes per variant") {
  auto [sg, og] = make_env(false, false).reset(1);
  CHECK(og.shape == Shape{3, 64, 64});
  auto [sl, ol] = make_env(false, true).reset(1);
  CHECK(ol.shape == Shape{3, 28, 28});
  auto [sd, od] = make_env(false, false, 32).reset(1);
  CHECK(od.shape == Shape{3, 32, 32});
  for (float v : og.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("reset: equal seeds give bit-identical observations and states") {
  const GridWorld env = make_env(true, false);
  auto [s1, o1] = env.reset(42);
  auto [s2, o2] = env.reset(42);
  CHECK(o1.data == o2.data);
  CHECK(s1.agent_pos == s2.agent_pos);
  CHECK(s1.spider_pos == s2.spider_pos);
}

TEST_CASE("reset: invalid layouts are rejected") {
  GridLayout l = GridLayout::default_layout();
  l.goal_cell = l.agent_start;
  CHECK_THROWS_AS(GridWorld({false, false}, l), std::invalid_argument);
  GridLayout l2 = GridLayout::default_layout();
  l2.block_cells.push_back(l2.hole_cell);
  CHECK_THROWS_AS(GridWorld({false, false}, l2), std::invalid_argument);
  GridLayout l3 = GridLayout::default_layout();
  l3.spider_start = {99, 0};
  CHECK_THROWS_AS(GridWorld({false, false}, l3), std::invalid_argument);
}

TEST_CASE("step: goal, hole, block and timeout semantics") {
  const GridWorld env = make_env(false, false);
  SUBCASE("moving onto the goal yields +1 and terminates") {
    auto [s0, o0] = env.reset(1);
    s0.agent_pos = {6, 5};  // directly above the goal
    auto [s1, r1] = env.step(s0, Action::down);
    CHECK(r1.reward == 1.0f);
    CHECK(r1.done);
    CHECK(s1.terminal);
    CHECK_THROWS_AS(env.step(s1, Action::up), std::logic_error);
  }
  SUBCASE("moving onto the hole yields -1 and terminates") {
    auto [s0, o0] = env.reset(1);
    s0.agent_pos = {5, 0};
    auto [s1, r1] = env.step(s0, Action::right);
    CHECK(r1.reward == -1.0f);
    CHECK(r1.done);
  }
  SUBCASE("blocked moves leave the position unchanged with zero reward") {
    auto [s0, o0] = env.reset(1);
    s0.agent_pos = {1, 1};  // block at (2,1)
    auto [s1, r1] = env.step(s0, Action::right);
    CHECK(s1.agent_pos == Cell{1, 1});
    CHECK(r1.reward == 0.0f);
    CHECK_FALSE(r1.done);
    // boundary moves too
    auto [s2, r2] = env.step(s0, Action::up);
    auto [s3, r3] = env.step(s2, Action::up);
    CHECK(s3.agent_pos.y == 0);
  }
  SUBCASE("the 500th step times out with reward 0") {
    auto [s, o] = env.reset(1);
    GridState state = s;
    float last_reward = 99;
    bool done = false;
    int steps = 0;
    while (!done) {
      // bounce between two safe cells forever
      const Action a = state.agent_pos == Cell{0, 0} ? Action::down : Action::up;
      const auto t = env.advance(state, a);
      last_reward = t.reward;
      done = t.done;
      ++steps;
    }
    CHECK(steps == GridWorld::kMaxSteps);
    CHECK(state.step_count == GridWorld::kMaxSteps);
    CHECK(last_reward == 0.0f);
  }
}

TEST_CASE("render: purity and tile structure") {
  const GridWorld env = make_env(false, false);
  auto [s, o] = env.reset(7);
  SUBCASE("identical states render identical pixels") {
    CHECK(env.render_global(s).data == env.render_global(s).data);
    CHECK(env.render_local(s).data == env.render_local(s).data);
  }
  SUBCASE("an empty floor region is a uniform color") {
    // cell (1,5) and neighbors are floor in the default layout; at 168->64
    // a cell spans ~9 pixels, probe two interior pixels of the same cell
    const Observation img = env.render_global(s);
    auto px = [&](int c, int y, int x) { return img.data[(c * 64 + y) * 64 + x]; };
    // cell (1,5) occupies x in [24,48)*64/168 ~ [9.1,18.3), y in [120,144)*64/168 ~ [45.7,54.8)
    CHECK(px(0, 48, 12) == doctest::Approx(px(0, 50, 14)));
    CHECK(px(0, 48, 12) == doctest::Approx(0.15f));
  }
  SUBCASE("area averaging maps a constant image to the same constant") {
    Tensor<float> flat({3, 168, 168}, 0.37f);
    const Tensor<float> small = area_average(flat, 64, 64);
    for (float v : small.data) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
    const Tensor<float> odd = area_average(flat, 32, 32);
    for (float v : odd.data) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
  }
}

TEST_CASE("render_local: boundary padding and spider visibility") {
  const GridWorld env = make_env(true, true);
  SUBCASE("agent in the corner sees 5 of 9 cells as block color") {
    auto [s, o] = env.reset(1);
    s.agent_pos = {0, 0};
    s.spider_pos = {3, 3};
    const Observation img = env.render_local(s);
    // probe the center pixel of each of the 9 tiles
    const Palette pal;
    int block_tiles = 0;
    for (int ty = 0; ty < 3; ++ty)
      for (int tx = 0; tx < 3; ++tx) {
        const int y = ty * 9 + 4, x = tx * 9 + 4;
        const bool is_block = img.data[(0 * 28 + y) * 28 + x] == doctest::Approx(pal.block[0]) &&
                              img.data[(1 * 28 + y) * 28 + x] == doctest::Approx(pal.block[1]);
        block_tiles += is_block;
      }
    CHECK(block_tiles == 5);
  }
  SUBCASE("a far spider is absent from the local view") {
    auto [s, o] = env.reset(1);
    s.agent_pos = {0, 0};
    s.spider_pos = {5, 5};
    const Observation img = env.render_local(s);
    const Palette pal;
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        const float r = img.data[(0 * 28 + y) * 28 + x];
        const float g = img.data[(1 * 28 + y) * 28 + x];
        const float b = img.data[(2 * 28 + y) * 28 + x];
        CHECK_FALSE((r == pal.spider[0] && g == pal.spider[1] && b == pal.spider[2]));
      }
    // adjacent spider is visible
    s.spider_pos = {1, 0};
    const Observation img2 = env.render_local(s);
    bool found = false;
    for (int y = 0; y < 28 && !found; ++y)
      for (int x = 0; x < 28 && !found; ++x)
        found = img2.data[(0 * 28 + y) * 28 + x] == doctest::Approx(pal.spider[0]).epsilon(1e-6) &&
                img2.data[(2 * 28 + y) * 28 + x] == doctest::Approx(pal.spider[2]).epsilon(1e-6);
    CHECK(found);
  }
}

TEST_CASE("shortest_path_length: BFS oracle values") {
  SUBCASE("empty grid is Manhattan distance") {
    GridLayout l;
    l.block_cells.clear();
    l.agent_start = {0, 0};
    l.goal_cell = {6, 6};
    l.hole_cell = {6, 0};
    l.spider_start = {3, 3};
    CHECK(shortest_path_length(l) == 12);
  }
  SUBCASE("default layout") {
    CHECK(shortest_path_length(GridLayout::default_layout()) == 12);
  }
  SUBCASE("goal at start is zero") {
    GridLayout l;
    l.block_cells.clear();
    l.agent_start = {3, 3};
    l.goal_cell = {3, 3};  // deliberately coincident: bypass validate via direct call
    l.hole_cell = {6, 0};
    l.spider_start = {1, 1};
    // validate() rejects coincident cells, so the oracle must see them first
    CHECK_THROWS_AS(shortest_path_length(l), std::invalid_argument);
  }
  SUBCASE("walled-off goal is unreachable") {
    GridLayout l;
    l.agent_start = {0, 0};
    l.goal_cell = {6, 6};
    l.hole_cell = {6, 0};
    l.spider_start = {3, 3};
    l.block_cells = {{5, 6}, {5, 5}, {6, 5}};
    CHECK_THROWS_AS(shortest_path_length(l), std::runtime_error);
  }
  SUBCASE("hole is avoided even when it shortens the path") {
    GridLayout l;
    l.agent_start = {0, 0};
    l.goal_cell = {2, 0};
    l.hole_cell = {1, 0};
    l.spider_start = {3, 3};
    l.block_cells = {};
    CHECK(shortest_path_length(l) == 4);  // detour around the hole
  }
}

TEST_CASE("map files parse into layouts") {
  const std::string text =
      "A.#...H\n"
      ".......\n"
      "..#....\n"
      "...S...\n"
      "....#..\n"
      ".......\n"
      "......G\n";
  const GridLayout l = GridLayout::parse(text);
  CHECK(l.width == 7);
  CHECK(l.height == 7);
  CHECK(l.agent_start == Cell{0, 0});
  CHECK(l.goal_cell == Cell{6, 6});
  CHECK(l.hole_cell == Cell{6, 0});
  CHECK(l.spider_start == Cell{3, 3});
  CHECK(l.block_cells.size() == 3);
  CHECK(l.is_block({2, 0}));

  CHECK_THROWS_AS(GridLayout::parse("A.G\n..\n"), std::invalid_argument);   // ragged
  CHECK_THROWS_AS(GridLayout::parse("A.G\n..X\n"), std::invalid_argument);  // unknown char
  CHECK_THROWS_AS(GridLayout::parse("...\n...\n"), std::invalid_argument);  // missing markers
}

TEST_CASE("property: agent stays in bounds and off blocks; episodes bounded") {
  for (const bool stochastic : {false, true}) {
    const GridWorld env = make_env(stochastic, false);
    const GridLayout& l = env.layout();
    Rng rng(1234);
    for (int ep = 0; ep < 20; ++ep) {
      auto [state, obs] = env.reset(ep);
      int steps = 0;
      float total = 0;
      while (!state.terminal) {
        total += env.advance(state, static_cast<Action>(rng.uniform_int(4))).reward;
        ++steps;
        CHECK(l.in_bounds(state.agent_pos));
        CHECK_FALSE(l.is_block(state.agent_pos));
        REQUIRE(steps <= GridWorld::kMaxSteps);
      }
      CHECK(steps <= GridWorld::kMaxSteps);
      CHECK(total >= -1.0f);
      CHECK(total <= 1.0f);
      // reward is +1 exactly when the agent ends on the goal
      CHECK((total == 1.0f) == (state.agent_pos == l.goal_cell));
    }
  }
}

TEST_CASE("property: deterministic variant is a pure function of actions") {
  const GridWorld env = make_env(false, false);
  Rng rng(5);
  std::vector<Action> actions;
  for (int i = 0; i < 60; ++i) actions.push_back(static_cast<Action>(rng.uniform_int(4)));
  auto rollout = [&]() {
    auto [state, obs] = env.reset(9);
    std::vector<float> rewards;
    for (Action a : actions) {
      if (state.terminal) break;
      rewards.push_back(env.advance(state, a).reward);
    }
    return std::pair(state.agent_pos, rewards);
  };
  auto a = rollout();
  auto b = rollout();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("property: stochastic rollouts reproduce bit-exactly under a fixed seed") {
  const GridWorld env = make_env(true, false);
  Rng arng(6);
  std::vector<Action> actions;
  for (int i = 0; i < 80; ++i) actions.push_back(static_cast<Action>(arng.uniform_int(4)));
  auto rollout = [&](std::uint64_t seed) {
    auto [state, obs] = env.reset(seed);
    std::vector<Cell> spider_path;
    for (Action a : actions) {
      if (state.terminal) break;
      env.advance(state, a);
      spider_path.push_back(state.spider_pos);
    }
    return spider_path;
  };
  CHECK(rollout(77) == rollout(77));
  // different seeds should diverge somewhere (overwhelmingly likely)
  CHECK(rollout(77) != rollout(78));
}

TEST_CASE("spider: walks floor cells only and can collide") {
  const GridWorld env = make_env(true, false);
  Rng rng(3);
  bool collided = false;
  for (int ep = 0; ep < 200 && !collided; ++ep) {
    auto [state, obs] = env.reset(1000 + ep);
    while (!state.terminal) {
      const Cell before = state.agent_pos;
      const auto t = env.advance(state, static_cast<Action>(rng.uniform_int(4)));
      CHECK_FALSE(env.layout().is_block(state.spider_pos));
      CHECK_FALSE(state.spider_pos == env.layout().goal_cell);
      CHECK_FALSE(state.spider_pos == env.layout().hole_cell);
      if (t.done && t.reward == -1.0f && state.agent_pos == state.spider_pos) collided = true;
      (void)before;
    }
  }
  CHECK(collided);  // collisions do occur across 200 random episodes
}
