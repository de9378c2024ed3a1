// evoplan CLI: train/plan runs, metrics aggregation, reconstruction dumps.

#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "evoplan/nn.hpp"
#include "evoplan/orchestrator.hpp"

namespace {

int cmd_run(const std::string& config_path,
            const std::vector<std::pair<std::string, std::string>>& overrides) {
  evoplan::orch::RunConfig cfg = evoplan::orch::RunConfig::load(config_path);
  for (const auto& [key, value] : overrides) cfg.apply(key, value);
  cfg.validate();
  std::printf("run: variant=%s profile=%s episodes=%d seeds=%zu out=%s\n",
              evoplan::orch::RunConfig::variant_name(cfg.variant).c_str(), cfg.profile.c_str(),
              cfg.episodes, cfg.seeds.size(), cfg.out_dir.c_str());
  evoplan::orch::run(cfg);
  return 0;
}

int cmd_dump_recon(const std::string& checkpoint, std::string episode, const std::string& out) {
  const auto meta = evoplan::diff::read_checkpoint_meta(checkpoint);
  evoplan::rssm::Model<float> model(evoplan::rssm::ModelConfig::from_meta(meta));
  evoplan::diff::load_checkpoint(model.params(), checkpoint);
  if (episode.ends_with(".pix")) episode.resize(episode.size() - 4);
  const auto record = evoplan::replay::load_episode(episode);
  evoplan::orch::dump_reconstructions(model, record, out);
  std::printf("wrote %zu frame pairs to %s\n", record.length(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space evolutionary planning agent"};
  app.require_subcommand(1);

  std::string config_path, variant, profile, out_dir;
  std::uint64_t seed = 0;
  int episodes = 0, threads = 0;
  auto* run = app.add_subcommand("run", "Train a model and act with the planner");
  run->add_option("--config", config_path, "key=value run configuration file")->required();
  run->add_option("--variant", variant, "det-global|det-local|stoch-global|stoch-local");
  auto* seed_opt = run->add_option("--seed", seed, "single seed overriding the config list");
  auto* episodes_opt = run->add_option("--episodes", episodes, "episode budget");
  run->add_option("--profile", profile, "full|desk");
  run->add_option("--out", out_dir, "output directory");
  auto* threads_opt = run->add_option("--threads", threads, "planner evaluation threads");

  std::string in_dir, out_file;
  auto* summarize = app.add_subcommand("summarize", "Aggregate per-seed metrics CSVs");
  summarize->add_option("--in", in_dir, "directory with metrics_seed*.csv")->required();
  summarize->add_option("--out", out_file, "summary CSV path")->required();

  std::string checkpoint, episode_path, recon_out;
  auto* dump = app.add_subcommand("dump-recon", "Write actual/reconstructed frame pairs");
  dump->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  dump->add_option("--episode", episode_path, "episode dump base path (or .pix file)")->required();
  dump->add_option("--out", recon_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      std::vector<std::pair<std::string, std::string>> overrides;
      if (!profile.empty()) overrides.emplace_back("profile", profile);
      if (!variant.empty()) overrides.emplace_back("variant", variant);
      if (*seed_opt) overrides.emplace_back("seeds", std::to_string(seed));
      if (*episodes_opt) overrides.emplace_back("episodes", std::to_string(episodes));
      if (!out_dir.empty()) overrides.emplace_back("out", out_dir);
      if (*threads_opt) overrides.emplace_back("threads", std::to_string(threads));
      return cmd_run(config_path, overrides);
    }
    if (summarize->parsed()) {
      evoplan::orch::summarize(in_dir, out_file);
      return 0;
    }
    if (dump->parsed()) return cmd_dump_recon(checkpoint, episode_path, recon_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
