#include "evoplan/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "evoplan/nn.hpp"

namespace evoplan::orch {

namespace fs = std::filesystem;

grid::TaskVariant RunConfig::parse_variant(const std::string& name) {
  if (name == "det-global") return {false, false};
  if (name == "det-local") return {false, true};
  if (name == "stoch-global") return {true, false};
  if (name == "stoch-local") return {true, true};
  throw std::invalid_argument("unknown variant: " + name +
                              " (expected det-global|det-local|stoch-global|stoch-local)");
}

std::string RunConfig::variant_name(grid::TaskVariant v) {
  return std::string(v.stochastic ? "stoch" : "det") + (v.local_view ? "-local" : "-global");
}

void RunConfig::validate() const {
  if (seeds.empty()) throw std::invalid_argument("config: at least one seed required");
  if (episodes < seed_episodes || seed_episodes < 1)
    throw std::invalid_argument("config: episodes >= seed_episodes >= 1 required");
  if (epochs_per_phase < 1 || batches_per_epoch < 1 || batch_size < 1 || seq_length < 1)
    throw std::invalid_argument("config: training sizes must be >= 1");
  if (profile != "full" && profile != "desk")
    throw std::invalid_argument("config: profile must be full or desk");
  planner.validate();
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  auto to_bool = [&](const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
  };
  if (key == "variant") variant = parse_variant(value);
  else if (key == "layout") layout_path = value;
  else if (key == "seeds") {
    seeds.clear();
    std::istringstream is(value);
    std::string tok;
    while (std::getline(is, tok, ',')) seeds.push_back(std::stoull(tok));
  } else if (key == "episodes") episodes = std::stoi(value);
  else if (key == "seed_episodes") seed_episodes = std::stoi(value);
  else if (key == "epochs_per_phase") epochs_per_phase = std::stoi(value);
  else if (key == "batches_per_epoch") batches_per_epoch = std::stoi(value);
  else if (key == "profile") {
    profile = value;
    if (profile == "desk") {  // reduced defaults; later keys may override
      batch_size = 16;
      planner.candidates = 64;
    }
  } else if (key == "out") out_dir = value;
  else if (key == "batch_size") batch_size = std::stoi(value);
  else if (key == "seq_length") seq_length = std::stoi(value);
  else if (key == "lr") learning_rate = std::stod(value);
  else if (key == "adam_epsilon") adam_epsilon = std::stod(value);
  else if (key == "grad_clip") grad_clip = std::stod(value);
  else if (key == "buffer_capacity") buffer_capacity = std::stoll(value);
  else if (key == "horizon") planner.horizon = std::stoi(value);
  else if (key == "candidates") planner.candidates = std::stoi(value);
  else if (key == "generations") planner.generations = std::stoi(value);
  else if (key == "mutation_rate") planner.mutation_rate = std::stod(value);
  else if (key == "shift_buffer") planner.shift_buffer = to_bool(value);
  else if (key == "samples") planner.samples = std::stoi(value);
  else if (key == "threads") planner.threads = std::stoi(value);
  else if (key == "dump_last_episode") dump_last_episode = to_bool(value);
  else throw std::invalid_argument("config: unknown key: " + key);
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  RunConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    c.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

grid::GridLayout RunConfig::layout() const {
  return layout_path.empty() ? grid::GridLayout::default_layout()
                             : grid::GridLayout::load(layout_path);
}

grid::RenderConfig RunConfig::render_config() const {
  grid::RenderConfig r;
  r.global_out = profile == "desk" ? 32 : 64;
  return r;
}

rssm::ModelConfig RunConfig::model_config() const {
  return rssm::ModelConfig::make(profile, variant.local_view);
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

namespace {

struct EpisodeOutcome {
  replay::EpisodeRecord record;
  double episode_return = 0.0;
  int steps = 0;
};

// Rolls one episode. When planner_state is null the policy is uniform
// random; otherwise each step filters the observation and plans.
struct PlannerState {
  const rssm::Model<float>* model = nullptr;
  const plan::PlannerConfig* config = nullptr;
  Rng* rng = nullptr;
  std::uint64_t noise_key_base = 0;
  std::uint64_t* plan_step = nullptr;
};

EpisodeOutcome roll_episode(const grid::GridWorld& env, std::uint64_t env_seed,
                            PlannerState* planner, Rng* random_policy_rng) {
  EpisodeOutcome out;
  auto [state, obs] = env.reset(env_seed);
  out.record.observations.push_back(obs);
  out.record.actions.push_back(0);
  out.record.rewards.push_back(0.0f);
  out.record.done_flags.push_back(false);

  rssm::LatentState<float> latent;
  bool have_latent = false;
  int prev_action = -1;
  std::optional<plan::ActionSequence> prev_plan;

  while (!state.terminal) {
    int action;
    if (planner) {
      latent = rssm::posterior_step(*planner->model,
                                    have_latent ? &latent : nullptr, prev_action,
                                    out.record.observations.back());
      have_latent = true;
      rssm::RssmForwardModel fm(*planner->model, latent);
      const plan::PlanResult res =
          plan::plan(fm, prev_plan, *planner->config, *planner->rng,
                     mix64(planner->noise_key_base, (*planner->plan_step)++));
      action = static_cast<int>(res.action);
      prev_plan = res.best;
    } else {
      action = random_policy_rng->uniform_int(grid::kActionCount);
    }

    out.record.actions.back() = action;
    auto [next, result] = env.step(state, static_cast<grid::Action>(action));
    state = next;
    out.record.observations.push_back(std::move(result.observation));
    out.record.actions.push_back(0);  // terminal pad, overwritten on the next step
    out.record.rewards.push_back(result.reward);
    out.record.done_flags.push_back(result.done);
    out.episode_return += result.reward;
    ++out.steps;
    prev_action = action;
  }
  return out;
}

struct MetricsRow {
  std::uint64_t seed;
  int episode;
  double episode_return;
  int steps;
  rssm::LossBreakdown loss;
  double wallclock_s;
};

void append_metrics(std::ofstream& f, const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%d,%.1f,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f\n",
                static_cast<unsigned long long>(r.seed), r.episode, r.episode_return, r.steps,
                r.loss.reconstruction_nll, r.loss.reward_nll, r.loss.kl_raw,
                r.loss.kl_regularized, r.loss.total, r.wallclock_s);
  f << buf;
}

}  // namespace

SeedRunResult run_seed_impl(const RunConfig& cfg, std::uint64_t seed, bool write_files) {
  const grid::GridWorld env(cfg.variant, cfg.layout(), cfg.render_config());
  rssm::Model<float> model(cfg.model_config());
  Rng init_rng(mix64(seed, 0x11));
  model.init(init_rng);
  diff::Adam<float> optimizer(model.params(), cfg.learning_rate, 0.9, 0.999, cfg.adam_epsilon);
  replay::ReplayBuffer buffer(cfg.buffer_capacity);

  Rng train_rng(mix64(seed, 0x22));
  Rng plan_rng(mix64(seed, 0x33));
  Rng random_policy_rng(mix64(seed, 0x55));
  const std::uint64_t env_seed_base = mix64(seed, 0xE0);
  const std::uint64_t noise_key_base = mix64(seed, 0x44);
  std::uint64_t plan_step = 0;

  std::ofstream metrics, losses;
  if (write_files) {
    fs::create_directories(cfg.out_dir);
    const std::string tag = "_seed" + std::to_string(seed);
    metrics.open(cfg.out_dir + "/metrics" + tag + ".csv");
    losses.open(cfg.out_dir + "/loss" + tag + ".csv");
    if (!metrics || !losses)
      throw std::runtime_error("cannot write metrics files under " + cfg.out_dir);
    metrics << "seed,episode,return,steps,recon_nll,reward_nll,kl_raw,kl_reg,total_loss,"
               "wallclock_s\n";
    losses << "epoch,recon_nll,reward_nll,kl_raw,kl_reg,total\n";
  }

  SeedRunResult result;
  int global_epoch = 0;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    rssm::LossBreakdown phase_loss;
    const bool learned_phase = ep >= cfg.seed_episodes;
    if (learned_phase) {
      for (int e = 0; e < cfg.epochs_per_phase; ++e) {
        const rssm::LossBreakdown b =
            rssm::train_epoch(model, buffer, optimizer, train_rng, cfg.batch_size, cfg.seq_length,
                              cfg.batches_per_epoch, cfg.grad_clip);
        phase_loss += b;
        if (write_files) {
          char buf[192];
          std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", global_epoch++,
                        b.reconstruction_nll, b.reward_nll, b.kl_raw, b.kl_regularized, b.total);
          losses << buf;
        } else {
          ++global_epoch;
        }
      }
      phase_loss /= cfg.epochs_per_phase;
    }

    PlannerState ps{&model, &cfg.planner, &plan_rng, noise_key_base, &plan_step};
    EpisodeOutcome outcome = roll_episode(env, mix64(env_seed_base, static_cast<std::uint64_t>(ep)),
                                          learned_phase ? &ps : nullptr, &random_policy_rng);
    buffer.push(outcome.record);
    result.returns.push_back(outcome.episode_return);
    result.steps.push_back(outcome.steps);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (write_files)
      append_metrics(metrics, MetricsRow{seed, ep, outcome.episode_return, outcome.steps,
                                         phase_loss, wall});

    if (write_files && cfg.dump_last_episode && ep == cfg.episodes - 1)
      replay::dump_episode(outcome.record,
                           cfg.out_dir + "/episode_seed" + std::to_string(seed));
  }

  if (write_files) {
    auto meta = cfg.model_config().to_meta();
    meta["variant"] = RunConfig::variant_name(cfg.variant);
    meta["profile"] = cfg.profile;
    diff::save_checkpoint(model.params(),
                          cfg.out_dir + "/checkpoint_seed" + std::to_string(seed) + ".ckpt", meta);
  }
  return result;
}

void run(const RunConfig& config) {
  config.validate();
  for (const std::uint64_t seed : config.seeds) run_seed_impl(config, seed, true);
}

SeedRunResult run_seed(const RunConfig& config, std::uint64_t seed) {
  config.validate();
  return run_seed_impl(config, seed, false);
}

// ---------------------------------------------------------------------------
// summarize
// ---------------------------------------------------------------------------

void summarize(const std::string& in_dir, const std::string& out_file) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_seed", 0) == 0 && name.ends_with(".csv"))
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("summarize: no metrics_seed*.csv in " + in_dir);

  std::vector<std::vector<double>> returns, steps;  // [seed][episode]
  for (const auto& path : files) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("summarize: cannot read " + path);
    std::string line;
    std::getline(f, line);  // header
    std::vector<double> r, s;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      // columns: seed,episode,return,steps,...
      std::istringstream is(line);
      std::string tok;
      std::getline(is, tok, ',');
      std::getline(is, tok, ',');
      std::getline(is, tok, ',');
      r.push_back(std::stod(tok));
      std::getline(is, tok, ',');
      s.push_back(std::stod(tok));
    }
    returns.push_back(std::move(r));
    steps.push_back(std::move(s));
  }
  const size_t n = returns[0].size();
  for (const auto& r : returns)
    if (r.size() != n)
      throw std::invalid_argument("summarize: metrics files have misaligned episode counts");

  std::ofstream out(out_file);
  if (!out) throw std::runtime_error("summarize: cannot write " + out_file);
  out << "episode,return_mean,return_std,steps_mean,steps_std\n";
  const double k = static_cast<double>(returns.size());
  for (size_t e = 0; e < n; ++e) {
    auto stats = [&](const std::vector<std::vector<double>>& v) {
      double mean = 0;
      for (const auto& row : v) mean += row[e];
      mean /= k;
      double var = 0;
      for (const auto& row : v) var += (row[e] - mean) * (row[e] - mean);
      return std::pair<double, double>(mean, std::sqrt(var / k));
    };
    const auto [rm, rs] = stats(returns);
    const auto [sm, ss] = stats(steps);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f\n", e, rm, rs, sm, ss);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// reconstructions
// ---------------------------------------------------------------------------

void write_ppm(const Tensor<float>& image, const std::string& path) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("write_ppm: expected (3,H,W), got " + shape_str(image.shape));
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image[(static_cast<std::int64_t>(c) * h + y) * w + x], 0.0f,
                                   1.0f);
        row[static_cast<size_t>(x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

void dump_reconstructions(const rssm::Model<float>& model, const replay::EpisodeRecord& episode,
                          const std::string& out_dir) {
  episode.validate();
  fs::create_directories(out_dir);
  rssm::LatentState<float> latent;
  bool have = false;
  for (size_t t = 0; t < episode.length(); ++t) {
    const int prev_action = t == 0 ? -1 : episode.actions[t - 1];
    latent = rssm::posterior_step(model, have ? &latent : nullptr, prev_action,
                                  episode.observations[t]);
    have = true;

    diff::Graph<float> g(false);
    diff::Value<float> decoded =
        model.decode_observation(g, g.input_view(latent.h), g.input_view(latent.s));
    Tensor<float> recon = decoded.data();
    recon.shape = {recon.shape[1], recon.shape[2], recon.shape[3]};

    char name[64];
    std::snprintf(name, sizeof(name), "/frame_%04zu_actual.ppm", t);
    write_ppm(episode.observations[t], out_dir + name);
    std::snprintf(name, sizeof(name), "/frame_%04zu_recon.ppm", t);
    write_ppm(recon, out_dir + name);
  }
}

double random_baseline(grid::TaskVariant variant, const grid::GridLayout& layout, int episodes,
                       std::uint64_t seed) {
  grid::RenderConfig render;
  const grid::GridWorld env(variant, layout, render);
  Rng policy(mix64(seed, 0x77));
  double total = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    grid::GridState state;
    state.agent_pos = layout.agent_start;
    state.spider_pos = layout.spider_start;
    state.rng = Rng(mix64(seed, static_cast<std::uint64_t>(ep)));
    while (!state.terminal)
      total += env.advance(state, static_cast<grid::Action>(policy.uniform_int(
                                      grid::kActionCount))).reward;
  }
  return total / episodes;
}

}  // namespace evoplan::orch
