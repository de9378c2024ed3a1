#include "evoplan/rssm.hpp"

#include <sstream>
#include <stdexcept>

namespace evoplan::rssm {

using diff::Graph;
using diff::Value;

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

ModelConfig ModelConfig::full(bool local_view) {
  ModelConfig c;
  if (local_view) {
    c.obs_size = 28;
    c.enc_kernels = {4, 4, 4, 1};
    c.dec_kernels = {2, 3, 5, 4};
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::desk(bool local_view) {
  ModelConfig c;
  c.enc_channels = {8, 16, 32, 64};
  c.dec_channels = {64, 32, 16, 3};
  c.dec_dense = 256;
  c.embed_dim = 64;
  c.deter_dim = 64;
  c.stoch_dim = 8;
  c.hidden_dim = 64;
  if (local_view) {
    c.obs_size = 28;
    c.enc_kernels = {4, 4, 4, 1};
    c.dec_kernels = {2, 3, 5, 4};
  } else {
    c.obs_size = 32;
    c.enc_kernels = {4, 4, 4, 2};
    c.dec_kernels = {3, 3, 3, 4};
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::make(const std::string& profile, bool local_view) {
  if (profile == "full") return full(local_view);
  if (profile == "desk") return desk(local_view);
  throw std::invalid_argument("unknown profile: " + profile);
}

std::vector<int> ModelConfig::encoder_spatial() const {
  std::vector<int> sizes{obs_size};
  for (int k : enc_kernels) {
    const int n = sizes.back();
    if (n < k)
      throw ShapeError("encoder: kernel " + std::to_string(k) + " larger than feature map " +
                       std::to_string(n));
    sizes.push_back((n - k) / stride + 1);
  }
  return sizes;
}

std::vector<int> ModelConfig::decoder_spatial() const {
  std::vector<int> sizes{1};
  for (int k : dec_kernels) sizes.push_back((sizes.back() - 1) * stride + k);
  return sizes;
}

int ModelConfig::encoder_flat() const {
  const int s = encoder_spatial().back();
  return enc_channels.back() * s * s;
}

void ModelConfig::validate() const {
  if (dec_channels.back() != obs_channels)
    throw std::invalid_argument("decoder output channels must match observation channels");
  const int out = decoder_spatial().back();
  if (out != obs_size)
    throw std::invalid_argument("decoder chain produces " + std::to_string(out) +
                                ", observations are " + std::to_string(obs_size));
  encoder_spatial();  // throws when the conv chain does not fit
}

std::map<std::string, std::string> ModelConfig::to_meta() const {
  auto join = [](const std::array<int, 4>& a) {
    std::ostringstream os;
    for (size_t i = 0; i < a.size(); ++i) os << (i ? "," : "") << a[i];
    return os.str();
  };
  std::map<std::string, std::string> m;
  m["obs_channels"] = std::to_string(obs_channels);
  m["obs_size"] = std::to_string(obs_size);
  m["enc_channels"] = join(enc_channels);
  m["enc_kernels"] = join(enc_kernels);
  m["dec_channels"] = join(dec_channels);
  m["dec_kernels"] = join(dec_kernels);
  m["dec_dense"] = std::to_string(dec_dense);
  m["embed_dim"] = std::to_string(embed_dim);
  m["deter_dim"] = std::to_string(deter_dim);
  m["stoch_dim"] = std::to_string(stoch_dim);
  m["hidden_dim"] = std::to_string(hidden_dim);
  m["action_dim"] = std::to_string(action_dim);
  m["stride"] = std::to_string(stride);
  m["std_floor"] = std::to_string(std_floor);
  m["free_nats"] = std::to_string(free_nats);
  m["kl_weight"] = std::to_string(kl_weight);
  return m;
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, std::string>& meta) {
  auto get = [&](const char* k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw std::runtime_error(std::string("checkpoint meta missing ") + k);
    return it->second;
  };
  auto split = [](const std::string& s) {
    std::array<int, 4> a{};
    std::istringstream is(s);
    std::string tok;
    for (int i = 0; i < 4; ++i) {
      std::getline(is, tok, ',');
      a[static_cast<size_t>(i)] = std::stoi(tok);
    }
    return a;
  };
  ModelConfig c;
  c.obs_channels = std::stoi(get("obs_channels"));
  c.obs_size = std::stoi(get("obs_size"));
  c.enc_channels = split(get("enc_channels"));
  c.enc_kernels = split(get("enc_kernels"));
  c.dec_channels = split(get("dec_channels"));
  c.dec_kernels = split(get("dec_kernels"));
  c.dec_dense = std::stoi(get("dec_dense"));
  c.embed_dim = std::stoi(get("embed_dim"));
  c.deter_dim = std::stoi(get("deter_dim"));
  c.stoch_dim = std::stoi(get("stoch_dim"));
  c.hidden_dim = std::stoi(get("hidden_dim"));
  c.action_dim = std::stoi(get("action_dim"));
  c.stride = std::stoi(get("stride"));
  c.std_floor = std::stof(get("std_floor"));
  c.free_nats = std::stof(get("free_nats"));
  c.kl_weight = std::stof(get("kl_weight"));
  c.validate();
  return c;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  reconstruction_nll += o.reconstruction_nll;
  reward_nll += o.reward_nll;
  kl_raw += o.kl_raw;
  kl_regularized += o.kl_regularized;
  total += o.total;
  return *this;
}

LossBreakdown& LossBreakdown::operator/=(double d) {
  reconstruction_nll /= d;
  reward_nll /= d;
  kl_raw /= d;
  kl_regularized /= d;
  total /= d;
  return *this;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename S>
Model<S>::Model(ModelConfig config) : cfg_(std::move(config)) {
  cfg_.validate();
  const int a = cfg_.action_dim;
  for (int i = 0; i < 4; ++i) {
    const int cin = i == 0 ? cfg_.obs_channels : cfg_.enc_channels[static_cast<size_t>(i - 1)];
    const int cout = cfg_.enc_channels[static_cast<size_t>(i)];
    const int k = cfg_.enc_kernels[static_cast<size_t>(i)];
    store_.add("enc.conv" + std::to_string(i) + ".kernel", {cout, cin, k, k});
    store_.add("enc.conv" + std::to_string(i) + ".bias", {cout});
  }
  store_.add("enc.fc.weight", {cfg_.embed_dim, cfg_.encoder_flat()});
  store_.add("enc.fc.bias", {cfg_.embed_dim});

  store_.add("trans.in.weight", {cfg_.deter_dim, cfg_.stoch_dim + a});
  store_.add("trans.in.bias", {cfg_.deter_dim});
  store_.add("trans.gru.wx", {3 * cfg_.deter_dim, cfg_.deter_dim});
  store_.add("trans.gru.wh", {3 * cfg_.deter_dim, cfg_.deter_dim});
  store_.add("trans.gru.bx", {3 * cfg_.deter_dim});
  store_.add("trans.gru.bh", {3 * cfg_.deter_dim});

  store_.add("prior.fc0.weight", {cfg_.hidden_dim, cfg_.deter_dim});
  store_.add("prior.fc0.bias", {cfg_.hidden_dim});
  store_.add("prior.fc1.weight", {2 * cfg_.stoch_dim, cfg_.hidden_dim});
  store_.add("prior.fc1.bias", {2 * cfg_.stoch_dim});

  store_.add("post.fc0.weight", {cfg_.hidden_dim, cfg_.deter_dim + cfg_.embed_dim});
  store_.add("post.fc0.bias", {cfg_.hidden_dim});
  store_.add("post.fc1.weight", {2 * cfg_.stoch_dim, cfg_.hidden_dim});
  store_.add("post.fc1.bias", {2 * cfg_.stoch_dim});

  store_.add("dec.fc.weight", {cfg_.dec_dense, cfg_.deter_dim + cfg_.stoch_dim});
  store_.add("dec.fc.bias", {cfg_.dec_dense});
  for (int i = 0; i < 4; ++i) {
    const int cin = i == 0 ? cfg_.dec_dense : cfg_.dec_channels[static_cast<size_t>(i - 1)];
    const int cout = cfg_.dec_channels[static_cast<size_t>(i)];
    const int k = cfg_.dec_kernels[static_cast<size_t>(i)];
    store_.add("dec.deconv" + std::to_string(i) + ".kernel", {cin, cout, k, k});
    store_.add("dec.deconv" + std::to_string(i) + ".bias", {cout});
  }

  store_.add("rew.fc0.weight", {cfg_.hidden_dim, cfg_.deter_dim + cfg_.stoch_dim});
  store_.add("rew.fc0.bias", {cfg_.hidden_dim});
  store_.add("rew.fc1.weight", {cfg_.hidden_dim, cfg_.hidden_dim});
  store_.add("rew.fc1.bias", {cfg_.hidden_dim});
  store_.add("rew.fc2.weight", {1, cfg_.hidden_dim});
  store_.add("rew.fc2.bias", {1});
}

template <typename S>
void Model<S>::init(Rng& rng) {
  for (auto& p : store_) {
    if (p->name.ends_with(".bias") || p->name.ends_with(".bx") || p->name.ends_with(".bh")) {
      p->value.zero();
    } else if (p->name.starts_with("dec.deconv")) {
      // transposed-conv kernels are (Cin, Cout, k, k); fan-in is Cin*k*k
      const auto& s = p->value.shape;
      diff::ParamStore<S>::init_uniform(*p, rng,
                                        static_cast<std::int64_t>(s[0]) * s[2] * s[3]);
    } else {
      diff::ParamStore<S>::init_uniform(*p, rng);
    }
  }
}

template <typename S>
Value<S> Model<S>::leaf(Graph<S>& g, const std::string& name) const {
  diff::Param<S>* p = store_.find(name);
  if (!p) throw std::logic_error("unknown parameter: " + name);
  return g.leaf(p->value, p->grad);
}

template <typename S>
Value<S> Model<S>::encode(Graph<S>& g, Value<S> obs) const {
  const auto& s = obs.shape();
  if (s.size() != 4 || s[1] != cfg_.obs_channels || s[2] != cfg_.obs_size || s[3] != cfg_.obs_size)
    throw ShapeError("encode: expected (N," + std::to_string(cfg_.obs_channels) + "," +
                     std::to_string(cfg_.obs_size) + "," + std::to_string(cfg_.obs_size) +
                     "), got " + shape_str(s));
  Value<S> x = obs;
  for (int i = 0; i < 4; ++i) {
    const std::string base = "enc.conv" + std::to_string(i);
    x = diff::conv2d(x, leaf(g, base + ".kernel"), cfg_.stride);
    x = diff::bias_channel(x, leaf(g, base + ".bias"));
    x = diff::relu(x);
  }
  return diff::dense(diff::flatten2d(x), leaf(g, "enc.fc.weight"), leaf(g, "enc.fc.bias"));
}

template <typename S>
Value<S> Model<S>::transition(Graph<S>& g, Value<S> h, Value<S> s, Value<S> action) const {
  if (action.shape().size() != 2 || action.shape()[1] != cfg_.action_dim)
    throw ShapeError("transition: action must be one-hot (N," + std::to_string(cfg_.action_dim) +
                     "), got " + shape_str(action.shape()));
  Value<S> pre = diff::relu(diff::dense(diff::concat<S>({s, action}, 1),
                                        leaf(g, "trans.in.weight"), leaf(g, "trans.in.bias")));
  diff::GruParams<S> p{leaf(g, "trans.gru.wx"), leaf(g, "trans.gru.wh"), leaf(g, "trans.gru.bx"),
                       leaf(g, "trans.gru.bh")};
  return diff::gated_recurrent_cell(pre, h, p);
}

template <typename S>
GaussParams<S> Model<S>::dist_head(Graph<S>& g, Value<S> input, const std::string& prefix) const {
  Value<S> hidden = diff::relu(
      diff::dense(input, leaf(g, prefix + ".fc0.weight"), leaf(g, prefix + ".fc0.bias")));
  Value<S> out = diff::dense(hidden, leaf(g, prefix + ".fc1.weight"), leaf(g, prefix + ".fc1.bias"));
  Value<S> mean = diff::cols(out, 0, cfg_.stoch_dim);
  Value<S> stddev = diff::add_scalar(diff::softplus(diff::cols(out, cfg_.stoch_dim, cfg_.stoch_dim)),
                                     static_cast<S>(cfg_.std_floor));
  return {mean, stddev};
}

template <typename S>
GaussParams<S> Model<S>::prior(Graph<S>& g, Value<S> h) const {
  return dist_head(g, h, "prior");
}

template <typename S>
GaussParams<S> Model<S>::posterior(Graph<S>& g, Value<S> h, Value<S> embed) const {
  return dist_head(g, diff::concat<S>({h, embed}, 1), "post");
}

template <typename S>
Value<S> Model<S>::decode_observation(Graph<S>& g, Value<S> h, Value<S> s) const {
  Value<S> x = diff::dense(diff::concat<S>({h, s}, 1), leaf(g, "dec.fc.weight"),
                           leaf(g, "dec.fc.bias"));
  x = diff::reshape(x, {x.shape()[0], cfg_.dec_dense, 1, 1});
  for (int i = 0; i < 4; ++i) {
    const std::string base = "dec.deconv" + std::to_string(i);
    x = diff::deconv2d(x, leaf(g, base + ".kernel"), cfg_.stride);
    x = diff::bias_channel(x, leaf(g, base + ".bias"));
    if (i < 3) x = diff::relu(x);
  }
  return x;
}

template <typename S>
Value<S> Model<S>::predict_reward(Graph<S>& g, Value<S> h, Value<S> s) const {
  Value<S> x = diff::concat<S>({h, s}, 1);
  x = diff::relu(diff::dense(x, leaf(g, "rew.fc0.weight"), leaf(g, "rew.fc0.bias")));
  x = diff::relu(diff::dense(x, leaf(g, "rew.fc1.weight"), leaf(g, "rew.fc1.bias")));
  return diff::dense(x, leaf(g, "rew.fc2.weight"), leaf(g, "rew.fc2.bias"));
}

template <typename S>
LatentState<S> Model<S>::initial_state(int batch) const {
  return {Tensor<S>({batch, cfg_.deter_dim}), Tensor<S>({batch, cfg_.stoch_dim})};
}

// ---------------------------------------------------------------------------
// filter / imagine / loss / training
// ---------------------------------------------------------------------------

template <typename S>
std::vector<FilterStep<S>> filter(Graph<S>& g, const Model<S>& model,
                                  const Tensor<S>& observations, const Tensor<S>& prev_actions,
                                  int batch, int length, const Tensor<S>& noise,
                                  const LatentState<S>* initial) {
  const ModelConfig& cfg = model.config();
  const std::int64_t rows_expected = static_cast<std::int64_t>(batch) * length;
  if (observations.ndim() != 4 || observations.dim(0) != rows_expected)
    throw std::invalid_argument("filter: observations must have L*B rows, got " +
                                shape_str(observations.shape));
  if (prev_actions.ndim() != 2 || prev_actions.dim(0) != rows_expected ||
      prev_actions.dim(1) != cfg.action_dim)
    throw std::invalid_argument("filter: prev_actions misaligned with observations");
  if (noise.ndim() != 2 || noise.dim(0) != rows_expected || noise.dim(1) != cfg.stoch_dim)
    throw std::invalid_argument("filter: noise misaligned with observations");

  Value<S> h = initial ? g.input(initial->h) : g.input(Tensor<S>({batch, cfg.deter_dim}));
  Value<S> s = initial ? g.input(initial->s) : g.input(Tensor<S>({batch, cfg.stoch_dim}));
  Value<S> obs_all = g.input_view(observations);
  Value<S> act_all = g.input_view(prev_actions);
  Value<S> noise_all = g.input_view(noise);
  Value<S> embed_all = model.encode(g, obs_all);

  std::vector<FilterStep<S>> steps;
  steps.reserve(static_cast<size_t>(length));
  for (int t = 0; t < length; ++t) {
    Value<S> a_t = diff::rows(act_all, t * batch, batch);
    Value<S> e_t = diff::rows(embed_all, t * batch, batch);
    Value<S> eps_t = diff::rows(noise_all, t * batch, batch);
    h = model.transition(g, h, s, a_t);
    GaussParams<S> pri = model.prior(g, h);
    GaussParams<S> post = model.posterior(g, h, e_t);
    s = diff::add(post.mean, diff::mul(post.stddev, eps_t));
    steps.push_back(FilterStep<S>{h, s, pri, post});
  }
  return steps;
}

template <typename S>
std::vector<S> imagine(const Model<S>& model, const LatentState<S>& start,
                       std::span<const grid::Action> actions, Rng* noise_rng) {
  const ModelConfig& cfg = model.config();
  if (start.h.ndim() != 2 || start.h.dim(0) != 1)
    throw std::invalid_argument("imagine: start state must have batch 1");
  std::vector<S> rewards;
  rewards.reserve(actions.size());
  if (actions.empty()) return rewards;

  Graph<S> g(false);
  Value<S> h = g.input(start.h);
  Value<S> s = g.input(start.s);
  for (grid::Action action : actions) {
    Tensor<S> onehot({1, cfg.action_dim});
    onehot[static_cast<int>(action)] = S(1);
    Value<S> a = g.input(std::move(onehot));
    h = model.transition(g, h, s, a);
    GaussParams<S> pri = model.prior(g, h);
    if (noise_rng) {
      Tensor<S> eps({1, cfg.stoch_dim});
      for (auto& v : eps.data) v = static_cast<S>(noise_rng->normal());
      s = diff::add(pri.mean, diff::mul(pri.stddev, g.input(std::move(eps))));
    } else {
      s = pri.mean;
    }
    rewards.push_back(model.predict_reward(g, h, s).data()[0]);
  }
  return rewards;
}

template <typename S>
ElboBatch<S> ElboBatch<S>::from_segments(const replay::SegmentBatch& seg) {
  ElboBatch<S> b;
  b.batch = seg.batch;
  b.length = seg.length;
  if constexpr (std::is_same_v<S, float>) {
    b.observations = seg.observations;
    b.prev_actions = seg.prev_actions;
    b.rewards = seg.rewards;
  } else {
    b.observations = seg.observations.template cast<S>();
    b.prev_actions = seg.prev_actions.template cast<S>();
    b.rewards = seg.rewards.template cast<S>();
  }
  return b;
}

template <typename S>
LossValues<S> elbo_loss(Graph<S>& g, const Model<S>& model, const ElboBatch<S>& batch,
                        const Tensor<S>& noise) {
  const ModelConfig& cfg = model.config();
  const int B = batch.batch, L = batch.length;
  if (B < 1 || L < 1 || batch.rewards.numel() != static_cast<std::int64_t>(B) * L)
    throw std::invalid_argument("elbo_loss: misaligned batch");

  std::vector<FilterStep<S>> steps =
      filter(g, model, batch.observations, batch.prev_actions, B, L, noise);

  std::vector<Value<S>> hs, ss;
  for (auto& st : steps) {
    hs.push_back(st.h);
    ss.push_back(st.s);
  }
  Value<S> h_all = diff::concat<S>(hs, 0);
  Value<S> s_all = diff::concat<S>(ss, 0);

  Value<S> decoded = model.decode_observation(g, h_all, s_all);
  Value<S> recon = diff::mul_scalar(diff::sse(decoded, batch.observations), S(1) / S(B));

  Value<S> rhat = diff::reshape(model.predict_reward(g, h_all, s_all), {B * L});
  Value<S> reward = diff::mul_scalar(diff::sse(rhat, batch.rewards), S(1) / S(B));

  Value<S> kl_raw_sum, kl_reg_sum;
  for (auto& st : steps) {
    Value<S> kl_t = diff::gaussian_kl(st.posterior.mean, st.posterior.stddev, st.prior.mean,
                                      st.prior.stddev);
    Value<S> raw_t = diff::sum_all(kl_t);
    Value<S> reg_t = diff::sum_all(diff::clamp_min(kl_t, static_cast<S>(cfg.free_nats)));
    kl_raw_sum = kl_raw_sum.defined() ? diff::add(kl_raw_sum, raw_t) : raw_t;
    kl_reg_sum = kl_reg_sum.defined() ? diff::add(kl_reg_sum, reg_t) : reg_t;
  }
  Value<S> kl_raw = diff::mul_scalar(kl_raw_sum, S(1) / S(B));
  Value<S> kl_reg = diff::mul_scalar(kl_reg_sum, static_cast<S>(cfg.kl_weight) / S(B));

  Value<S> total = diff::add(diff::add(recon, reward), kl_reg);

  LossValues<S> out;
  out.total = total;
  out.breakdown.reconstruction_nll = static_cast<double>(recon.data()[0]);
  out.breakdown.reward_nll = static_cast<double>(reward.data()[0]);
  out.breakdown.kl_raw = static_cast<double>(kl_raw.data()[0]);
  out.breakdown.kl_regularized = static_cast<double>(kl_reg.data()[0]);
  out.breakdown.total = static_cast<double>(total.data()[0]);
  return out;
}

template <typename S>
LossBreakdown train_epoch(Model<S>& model, const replay::ReplayBuffer& buffer,
                          diff::Adam<S>& optimizer, Rng& rng, int batch, int length, int batches,
                          double grad_clip) {
  if (batches < 1) throw std::invalid_argument("train_epoch: batches must be >= 1");
  LossBreakdown avg;
  for (int i = 0; i < batches; ++i) {
    replay::SegmentBatch seg = buffer.sample_batch(batch, length, rng);
    ElboBatch<S> eb = ElboBatch<S>::from_segments(seg);
    Tensor<S> noise({batch * length, model.config().stoch_dim});
    for (auto& v : noise.data) v = static_cast<S>(rng.normal());

    Graph<S> g(true);
    model.params().zero_grads();
    LossValues<S> loss = elbo_loss(g, model, eb, noise);
    g.backward(loss.total);
    diff::clip_grad_norm(model.params(), grad_clip);
    optimizer.step();
    avg += loss.breakdown;
  }
  avg /= static_cast<double>(batches);
  return avg;
}

template <typename S>
LatentState<S> posterior_step(const Model<S>& model, const LatentState<S>* prev, int prev_action,
                              const Tensor<S>& observation, const Tensor<S>* noise) {
  const ModelConfig& cfg = model.config();
  Graph<S> g(false);
  Value<S> h = g.input(prev ? prev->h : Tensor<S>({1, cfg.deter_dim}));
  Value<S> s = g.input(prev ? prev->s : Tensor<S>({1, cfg.stoch_dim}));
  Tensor<S> onehot({1, cfg.action_dim});
  if (prev_action >= 0) onehot[prev_action] = S(1);
  Value<S> a = g.input(std::move(onehot));

  Tensor<S> obs = observation;
  if (obs.ndim() == 3) obs.shape = {1, obs.shape[0], obs.shape[1], obs.shape[2]};
  Value<S> embed = model.encode(g, g.input(std::move(obs)));

  h = model.transition(g, h, s, a);
  GaussParams<S> post = model.posterior(g, h, embed);
  Value<S> sampled =
      noise ? diff::add(post.mean, diff::mul(post.stddev, g.input_view(*noise))) : post.mean;
  return LatentState<S>{h.data(), sampled.data()};
}

// ---------------------------------------------------------------------------
// planner adapter
// ---------------------------------------------------------------------------

void RssmForwardModel::rollout_returns(std::span<const plan::ActionSequence> chunk,
                                       std::span<const std::uint64_t> noise_keys,
                                       std::span<double> out) const {
  const int b = static_cast<int>(chunk.size());
  if (b == 0) return;
  const size_t horizon = chunk[0].size();
  for (const auto& c : chunk)
    if (c.size() != horizon) {  // unequal lengths: score one by one
      plan::ForwardModel::rollout_returns(chunk, noise_keys, out);
      return;
    }
  const ModelConfig& cfg = model_.config();

  Graph<float> g(false);
  Tensor<float> h0({b, cfg.deter_dim}), s0({b, cfg.stoch_dim});
  for (int i = 0; i < b; ++i) {
    std::copy_n(start_.h.ptr(), cfg.deter_dim, h0.ptr() + i * cfg.deter_dim);
    std::copy_n(start_.s.ptr(), cfg.stoch_dim, s0.ptr() + i * cfg.stoch_dim);
  }
  Value<float> h = g.input(std::move(h0));
  Value<float> s = g.input(std::move(s0));

  std::vector<Rng> streams;
  streams.reserve(chunk.size());
  for (const std::uint64_t key : noise_keys) streams.emplace_back(key);

  std::fill(out.begin(), out.end(), 0.0);
  for (size_t t = 0; t < horizon; ++t) {
    Tensor<float> onehot({b, cfg.action_dim});
    Tensor<float> noise({b, cfg.stoch_dim});
    for (int i = 0; i < b; ++i) {
      onehot[static_cast<std::int64_t>(i) * cfg.action_dim + static_cast<int>(chunk[i][t])] = 1.0f;
      for (int d = 0; d < cfg.stoch_dim; ++d)
        noise[static_cast<std::int64_t>(i) * cfg.stoch_dim + d] =
            static_cast<float>(streams[static_cast<size_t>(i)].normal());
    }
    h = model_.transition(g, h, s, g.input(std::move(onehot)));
    GaussParams<float> pri = model_.prior(g, h);
    s = diff::add(pri.mean, diff::mul(pri.stddev, g.input(std::move(noise))));
    const Value<float> r = model_.predict_reward(g, h, s);
    for (int i = 0; i < b; ++i) out[static_cast<size_t>(i)] += r.data()[i];
  }
}

double RssmForwardModel::rollout_return(std::span<const grid::Action> actions,
                                        std::uint64_t noise_key) const {
  const plan::ActionSequence seq(actions.begin(), actions.end());
  double result = 0.0;
  rollout_returns(std::span<const plan::ActionSequence>(&seq, 1),
                  std::span<const std::uint64_t>(&noise_key, 1), std::span<double>(&result, 1));
  return result;
}

template class Model<float>;
template class Model<double>;
template struct ElboBatch<float>;
template struct ElboBatch<double>;

template std::vector<FilterStep<float>> filter(Graph<float>&, const Model<float>&,
                                               const Tensor<float>&, const Tensor<float>&, int,
                                               int, const Tensor<float>&,
                                               const LatentState<float>*);
template std::vector<FilterStep<double>> filter(Graph<double>&, const Model<double>&,
                                                const Tensor<double>&, const Tensor<double>&, int,
                                                int, const Tensor<double>&,
                                                const LatentState<double>*);
template std::vector<float> imagine(const Model<float>&, const LatentState<float>&,
                                    std::span<const grid::Action>, Rng*);
template std::vector<double> imagine(const Model<double>&, const LatentState<double>&,
                                     std::span<const grid::Action>, Rng*);
template LossValues<float> elbo_loss(Graph<float>&, const Model<float>&, const ElboBatch<float>&,
                                     const Tensor<float>&);
template LossValues<double> elbo_loss(Graph<double>&, const Model<double>&,
                                      const ElboBatch<double>&, const Tensor<double>&);
template LossBreakdown train_epoch(Model<float>&, const replay::ReplayBuffer&, diff::Adam<float>&,
                                   Rng&, int, int, int, double);
template LossBreakdown train_epoch(Model<double>&, const replay::ReplayBuffer&,
                                   diff::Adam<double>&, Rng&, int, int, int, double);
template LatentState<float> posterior_step(const Model<float>&, const LatentState<float>*, int,
                                           const Tensor<float>&, const Tensor<float>*);
template LatentState<double> posterior_step(const Model<double>&, const LatentState<double>*, int,
                                            const Tensor<double>&, const Tensor<double>*);

}  // namespace evoplan::rssm
