#include "evoplan/gridworld.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace evoplan::grid {

namespace {

constexpr int kDx[kActionCount] = {0, 0, -1, 1};  // up, down, left, right
constexpr int kDy[kActionCount] = {-1, 1, 0, 0};

}  // namespace

bool GridLayout::is_block(Cell c) const {
  return std::find(block_cells.begin(), block_cells.end(), c) != block_cells.end();
}

void GridLayout::validate() const {
  if (width < 2 || height < 2) throw std::invalid_argument("layout: grid too small");
  const Cell specials[4] = {agent_start, goal_cell, hole_cell, spider_start};
  const char* names[4] = {"agent start", "goal", "hole", "spider start"};
  for (int i = 0; i < 4; ++i) {
    if (!in_bounds(specials[i]))
      throw std::invalid_argument(std::string("layout: ") + names[i] + " out of bounds");
    if (is_block(specials[i]))
      throw std::invalid_argument(std::string("layout: ") + names[i] + " placed on a block");
    for (int j = i + 1; j < 4; ++j)
      if (specials[i] == specials[j])
        throw std::invalid_argument(std::string("layout: ") + names[i] + " coincides with " +
                                    names[j]);
  }
  for (Cell b : block_cells)
    if (!in_bounds(b)) throw std::invalid_argument("layout: block cell out of bounds");
}

GridLayout GridLayout::default_layout() {
  GridLayout l;
  l.block_cells = {{2, 1}, {2, 2}, {2, 3}, {4, 3}, {4, 4}, {4, 5}};
  l.validate();
  return l;
}

GridLayout GridLayout::parse(const std::string& text) {
  GridLayout l;
  l.block_cells.clear();
  std::vector<std::string> lines;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw std::invalid_argument("map: empty");
  l.height = static_cast<int>(lines.size());
  l.width = static_cast<int>(lines[0].size());
  bool has_a = false, has_g = false, has_h = false, has_s = false;
  for (int y = 0; y < l.height; ++y) {
    if (static_cast<int>(lines[y].size()) != l.width)
      throw std::invalid_argument("map: rows have unequal length");
    for (int x = 0; x < l.width; ++x) {
      const Cell c{x, y};
      switch (lines[y][x]) {
        case '.': break;
        case '#': l.block_cells.push_back(c); break;
        case 'A': l.agent_start = c; has_a = true; break;
        case 'G': l.goal_cell = c; has_g = true; break;
        case 'H': l.hole_cell = c; has_h = true; break;
        case 'S': l.spider_start = c; has_s = true; break;
        default:
          throw std::invalid_argument(std::string("map: unknown character '") + lines[y][x] + "'");
      }
    }
  }
  if (!has_a || !has_g || !has_h)
    throw std::invalid_argument("map: needs at least A, G and H markers");
  if (!has_s) {
    // no S marker: place the spider on any free floor cell
    for (int y = 0; y < l.height && !has_s; ++y)
      for (int x = 0; x < l.width && !has_s; ++x) {
        const Cell c{x, y};
        if (!l.is_block(c) && !(c == l.agent_start) && !(c == l.goal_cell) &&
            !(c == l.hole_cell)) {
          l.spider_start = c;
          has_s = true;
        }
      }
    if (!has_s) throw std::invalid_argument("map: no free cell for the spider start");
  }
  l.validate();
  return l;
}

GridLayout GridLayout::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("map: cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

GridWorld::GridWorld(TaskVariant variant, GridLayout layout, RenderConfig render)
    : variant_(variant), layout_(std::move(layout)), render_(render) {
  layout_.validate();
}

std::pair<GridState, Observation> GridWorld::reset(std::uint64_t seed) const {
  GridState s;
  s.agent_pos = layout_.agent_start;
  s.spider_pos = layout_.spider_start;
  s.step_count = 0;
  s.terminal = false;
  s.rng = Rng(seed);
  return {s, render(s)};
}

GridWorld::Transition GridWorld::advance(GridState& state, Action action) const {
  if (state.terminal) throw std::logic_error("step on a terminal state");
  const int a = static_cast<int>(action);
  if (a < 0 || a >= kActionCount) throw std::invalid_argument("invalid action index");

  Cell next{state.agent_pos.x + kDx[a], state.agent_pos.y + kDy[a]};
  if (layout_.in_bounds(next) && !layout_.is_block(next)) state.agent_pos = next;

  Transition t;
  if (state.agent_pos == layout_.goal_cell) {
    t = {1.0f, true};
  } else if (state.agent_pos == layout_.hole_cell) {
    t = {-1.0f, true};
  } else if (variant_.stochastic) {
    // spider walks after the agent over floor cells only; collision is
    // co-occupancy after both moves
    Cell options[kActionCount];
    int count = 0;
    for (int d = 0; d < kActionCount; ++d) {
      const Cell c{state.spider_pos.x + kDx[d], state.spider_pos.y + kDy[d]};
      if (layout_.in_bounds(c) && !layout_.is_block(c) && !(c == layout_.goal_cell) &&
          !(c == layout_.hole_cell))
        options[count++] = c;
    }
    if (count > 0) state.spider_pos = options[state.rng.uniform_int(count)];
    if (state.spider_pos == state.agent_pos) t = {-1.0f, true};
  }

  ++state.step_count;
  if (!t.done && state.step_count >= kMaxSteps) t = {0.0f, true};
  state.terminal = t.done;
  return t;
}

std::pair<GridState, StepResult> GridWorld::step(const GridState& state, Action action) const {
  GridState next = state;
  const Transition t = advance(next, action);
  return {next, StepResult{render(next), t.reward, t.done}};
}

Observation GridWorld::render(const GridState& state) const {
  return variant_.local_view ? render_local(state) : render_global(state);
}

namespace {

void fill_tile(Tensor<float>& img, int x0, int y0, int size, const float color[3]) {
  const int h = img.shape[1], w = img.shape[2];
  for (int c = 0; c < 3; ++c)
    for (int y = y0; y < y0 + size && y < h; ++y)
      for (int x = x0; x < x0 + size && x < w; ++x)
        img[(static_cast<std::int64_t>(c) * h + y) * w + x] = color[c];
}

}  // namespace

Observation GridWorld::render_global(const GridState& state) const {
  const int tile = render_.tile_px;
  const int full_h = layout_.height * tile, full_w = layout_.width * tile;
  Tensor<float> img({3, full_h, full_w});
  for (int y = 0; y < layout_.height; ++y)
    for (int x = 0; x < layout_.width; ++x) fill_tile(img, x * tile, y * tile, tile, palette_.floor);
  for (Cell b : layout_.block_cells) fill_tile(img, b.x * tile, b.y * tile, tile, palette_.block);
  fill_tile(img, layout_.goal_cell.x * tile, layout_.goal_cell.y * tile, tile, palette_.goal);
  fill_tile(img, layout_.hole_cell.x * tile, layout_.hole_cell.y * tile, tile, palette_.hole);
  if (variant_.stochastic)
    fill_tile(img, state.spider_pos.x * tile, state.spider_pos.y * tile, tile, palette_.spider);
  fill_tile(img, state.agent_pos.x * tile, state.agent_pos.y * tile, tile, palette_.agent);
  return area_average(img, render_.global_out, render_.global_out);
}

Observation GridWorld::render_local(const GridState& state) const {
  const int tile = render_.local_tile_px;
  const int canvas = 3 * tile + 1;  // 3x3 neighborhood plus a 1-pixel frame
  Tensor<float> img({3, canvas, canvas});
  // frame and out-of-bounds padding use the block color
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(canvas) * canvas; ++i)
      img[c * canvas * canvas + i] = palette_.block[c];
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const Cell c{state.agent_pos.x + dx, state.agent_pos.y + dy};
      const float* color = palette_.block;
      if (layout_.in_bounds(c)) {
        if (layout_.is_block(c)) color = palette_.block;
        else if (c == layout_.goal_cell) color = palette_.goal;
        else if (c == layout_.hole_cell) color = palette_.hole;
        else if (variant_.stochastic && c == state.spider_pos) color = palette_.spider;
        else color = palette_.floor;
      }
      if (dx == 0 && dy == 0) color = palette_.agent;
      fill_tile(img, (dx + 1) * tile, (dy + 1) * tile, tile, color);
    }
  return img;
}

int GridWorld::observation_size() const {
  return variant_.local_view ? 3 * render_.local_tile_px + 1 : render_.global_out;
}

int shortest_path_length(const GridLayout& layout) {
  layout.validate();
  if (layout.agent_start == layout.goal_cell) return 0;
  std::vector<int> dist(static_cast<size_t>(layout.width) * layout.height, -1);
  auto idx = [&](Cell c) { return static_cast<size_t>(c.y) * layout.width + c.x; };
  std::deque<Cell> queue{layout.agent_start};
  dist[idx(layout.agent_start)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (int d = 0; d < kActionCount; ++d) {
      const Cell n{c.x + kDx[d], c.y + kDy[d]};
      if (!layout.in_bounds(n) || layout.is_block(n) || n == layout.hole_cell) continue;
      if (dist[idx(n)] != -1) continue;
      dist[idx(n)] = dist[idx(c)] + 1;
      if (n == layout.goal_cell) return dist[idx(n)];
      queue.push_back(n);
    }
  }
  throw std::runtime_error("shortest_path_length: goal unreachable");
}

Tensor<float> area_average(const Tensor<float>& image, int out_h, int out_w) {
  const int ch = image.shape[0], in_h = image.shape[1], in_w = image.shape[2];
  if (out_h == in_h && out_w == in_w) return image;
  Tensor<float> out({ch, out_h, out_w});
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int c = 0; c < ch; ++c)
    for (int oy = 0; oy < out_h; ++oy) {
      const double y0 = oy * sy, y1 = (oy + 1) * sy;
      const int iy0 = static_cast<int>(y0), iy1 = std::min(in_h, static_cast<int>(std::ceil(y1)));
      for (int ox = 0; ox < out_w; ++ox) {
        const double x0 = ox * sx, x1 = (ox + 1) * sx;
        const int ix0 = static_cast<int>(x0), ix1 = std::min(in_w, static_cast<int>(std::ceil(x1)));
        double acc = 0.0;
        for (int iy = iy0; iy < iy1; ++iy) {
          const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          for (int ix = ix0; ix < ix1; ++ix) {
            const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            acc += wy * wx * image[(static_cast<std::int64_t>(c) * in_h + iy) * in_w + ix];
          }
        }
        out[(static_cast<std::int64_t>(c) * out_h + oy) * out_w + ox] =
            static_cast<float>(acc / (sy * sx));
      }
    }
  return out;
}

}  // namespace evoplan::grid
