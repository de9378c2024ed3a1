#include "evoplan/replay.hpp"

#include <fstream>
#include <stdexcept>

namespace evoplan::replay {

void EpisodeRecord::validate() const {
  const size_t n = observations.size();
  if (n == 0) throw std::invalid_argument("episode: empty");
  if (actions.size() != n || rewards.size() != n || done_flags.size() != n)
    throw std::invalid_argument("episode: misaligned fields");
  if (rewards[0] != 0.0f) throw std::invalid_argument("episode: reward at reset must be 0");
  for (size_t i = 0; i + 1 < n; ++i)
    if (done_flags[i]) throw std::invalid_argument("episode: done before the final record");
  const Shape& s0 = observations[0].shape;
  for (const auto& o : observations)
    if (o.shape != s0) throw std::invalid_argument("episode: observation shapes differ");
}

void ReplayBuffer::push(EpisodeRecord episode) {
  episode.validate();
  steps_ += static_cast<std::int64_t>(episode.length());
  episodes_.push_back(std::move(episode));
  while (steps_ > capacity_ && episodes_.size() > 1) {
    steps_ -= static_cast<std::int64_t>(episodes_.front().length());
    episodes_.pop_front();
  }
}

bool ReplayBuffer::has_episode_of_length(int length) const {
  for (const auto& e : episodes_)
    if (static_cast<int>(e.length()) >= length) return true;
  return false;
}

SegmentBatch ReplayBuffer::sample_batch(int batch, int length, Rng& rng) const {
  if (batch < 1 || length < 1) throw std::invalid_argument("sample_batch: bad batch/length");
  std::vector<const EpisodeRecord*> eligible;
  for (const auto& e : episodes_)
    if (static_cast<int>(e.length()) >= length) eligible.push_back(&e);
  if (eligible.empty())
    throw std::invalid_argument("sample_batch: no episode of length >= " +
                                std::to_string(length));

  const Shape& os = eligible[0]->observations[0].shape;
  const std::int64_t obs_n = shape_numel(os);
  SegmentBatch out;
  out.batch = batch;
  out.length = length;
  out.observations = Tensor<float>({length * batch, os[0], os[1], os[2]});
  out.prev_actions = Tensor<float>({length * batch, grid::kActionCount});
  out.rewards = Tensor<float>({length * batch});

  for (int b = 0; b < batch; ++b) {
    const EpisodeRecord& e = *eligible[static_cast<size_t>(rng.uniform_int(
        static_cast<int>(eligible.size())))];
    const int start = rng.uniform_int(static_cast<int>(e.length()) - length + 1);
    for (int t = 0; t < length; ++t) {
      const std::int64_t row = static_cast<std::int64_t>(t) * batch + b;
      std::copy_n(e.observations[static_cast<size_t>(start + t)].ptr(), obs_n,
                  out.observations.ptr() + row * obs_n);
      const int prev = start + t - 1;
      if (prev >= 0)
        out.prev_actions[row * grid::kActionCount + e.actions[static_cast<size_t>(prev)]] = 1.0f;
      out.rewards[row] = e.rewards[static_cast<size_t>(start + t)];
    }
  }
  return out;
}

void dump_episode(const EpisodeRecord& episode, const std::string& base_path) {
  episode.validate();
  const Shape& s = episode.observations[0].shape;
  std::ofstream pix(base_path + ".pix", std::ios::binary);
  if (!pix) throw std::runtime_error("cannot write " + base_path + ".pix");
  pix << episode.length() << ' ' << s[0] << ' ' << s[1] << ' ' << s[2] << '\n';
  for (const auto& o : episode.observations)
    pix.write(reinterpret_cast<const char*>(o.ptr()),
              static_cast<std::streamsize>(o.numel() * sizeof(float)));
  if (!pix) throw std::runtime_error("write failed: " + base_path + ".pix");

  std::ofstream csv(base_path + ".csv");
  if (!csv) throw std::runtime_error("cannot write " + base_path + ".csv");
  csv << "step,action,reward,done\n";
  for (size_t i = 0; i < episode.length(); ++i)
    csv << i << ',' << episode.actions[i] << ',' << episode.rewards[i] << ','
        << (episode.done_flags[i] ? 1 : 0) << '\n';
}

EpisodeRecord load_episode(const std::string& base_path) {
  std::ifstream pix(base_path + ".pix", std::ios::binary);
  if (!pix) throw std::runtime_error("cannot read " + base_path + ".pix");
  size_t count;
  int c, h, w;
  pix >> count >> c >> h >> w;
  pix.ignore(1);
  EpisodeRecord e;
  for (size_t i = 0; i < count; ++i) {
    Tensor<float> o({c, h, w});
    pix.read(reinterpret_cast<char*>(o.ptr()),
             static_cast<std::streamsize>(o.numel() * sizeof(float)));
    if (!pix) throw std::runtime_error("pixel stream truncated: " + base_path + ".pix");
    e.observations.push_back(std::move(o));
  }

  std::ifstream csv(base_path + ".csv");
  if (!csv) throw std::runtime_error("cannot read " + base_path + ".csv");
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    size_t step;
    int action, done;
    float reward;
    if (std::sscanf(line.c_str(), "%zu,%d,%f,%d", &step, &action, &reward, &done) != 4)
      throw std::runtime_error("bad sidecar row: " + line);
    e.actions.push_back(action);
    e.rewards.push_back(reward);
    e.done_flags.push_back(done != 0);
  }
  e.validate();
  return e;
}

}  // namespace evoplan::replay
