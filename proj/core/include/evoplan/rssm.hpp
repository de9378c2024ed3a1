#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "evoplan/graph.hpp"
#include "evoplan/nn.hpp"
#include "evoplan/planner.hpp"
#include "evoplan/replay.hpp"
#include "evoplan/rng.hpp"

namespace evoplan::rssm {

// Architecture constants. The full profile follows the reference
// architecture (four conv layers 32/64/128/256, kernel 4, stride 2, last
// kernel 1 for 28x28 inputs; deconv kernels 5,5,6,6 or 2,3,5,4); the desk
// profile shrinks every width for CI-speed runs over 32x32 observations.
struct ModelConfig {
  int obs_channels = 3;
  int obs_size = 64;
  std::array<int, 4> enc_channels{32, 64, 128, 256};
  std::array<int, 4> enc_kernels{4, 4, 4, 4};
  std::array<int, 4> dec_channels{128, 64, 32, 3};
  std::array<int, 4> dec_kernels{5, 5, 6, 6};
  int dec_dense = 1024;
  int embed_dim = 200;
  int deter_dim = 200;
  int stoch_dim = 32;
  int hidden_dim = 200;
  int action_dim = grid::kActionCount;
  int stride = 2;
  float std_floor = 0.1f;
  float free_nats = 3.0f;
  float kl_weight = 0.1f;

  static ModelConfig full(bool local_view);
  static ModelConfig desk(bool local_view);
  static ModelConfig make(const std::string& profile, bool local_view);

  std::vector<int> encoder_spatial() const;  // conv output sizes, input first
  std::vector<int> decoder_spatial() const;  // deconv output sizes, 1 first
  int encoder_flat() const;
  void validate() const;

  std::map<std::string, std::string> to_meta() const;
  static ModelConfig from_meta(const std::map<std::string, std::string>& meta);
};

template <typename S>
struct GaussParams {
  diff::Value<S> mean;
  diff::Value<S> stddev;
};

// Concrete latent state outside any graph; batch-major (B, dim).
template <typename S>
struct LatentState {
  Tensor<S> h;
  Tensor<S> s;
};

template <typename S>
struct FilterStep {
  diff::Value<S> h;
  diff::Value<S> s;
  GaussParams<S> prior;
  GaussParams<S> posterior;
};

struct LossBreakdown {
  double reconstruction_nll = 0.0;
  double reward_nll = 0.0;
  double kl_raw = 0.0;
  double kl_regularized = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown& operator/=(double d);
};

template <typename S>
struct LossValues {
  diff::Value<S> total;
  LossBreakdown breakdown;
};

// Training batch in graph scalar type, time-major rows (t * batch + b).
template <typename S>
struct ElboBatch {
  Tensor<S> observations;  // (L*B, C, H, W)
  Tensor<S> prev_actions;  // (L*B, A)
  Tensor<S> rewards;       // (L*B)
  int batch = 0;
  int length = 0;

  static ElboBatch from_segments(const replay::SegmentBatch& seg);
};

// The recurrent state space model: convolutional encoder, GRU transition,
// prior/posterior heads over the stochastic state, deconvolutional
// observation decoder and a feed-forward reward head. All graph-building
// methods are const and only read parameters, so planning-time forward
// passes may run concurrently on a frozen model.
template <typename S>
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return cfg_; }
  diff::ParamStore<S>& params() { return store_; }
  const diff::ParamStore<S>& params() const { return store_; }

  void init(Rng& rng);

  // (N, C, H, W) -> (N, embed_dim)
  diff::Value<S> encode(diff::Graph<S>& g, diff::Value<S> obs) const;
  // h,s (N, dim), action one-hot (N, A) -> next deterministic state
  diff::Value<S> transition(diff::Graph<S>& g, diff::Value<S> h, diff::Value<S> s,
                            diff::Value<S> action) const;
  GaussParams<S> prior(diff::Graph<S>& g, diff::Value<S> h) const;
  GaussParams<S> posterior(diff::Graph<S>& g, diff::Value<S> h, diff::Value<S> embed) const;
  // -> (N, C, H, W)
  diff::Value<S> decode_observation(diff::Graph<S>& g, diff::Value<S> h, diff::Value<S> s) const;
  // -> (N, 1), mean of a unit-variance Gaussian
  diff::Value<S> predict_reward(diff::Graph<S>& g, diff::Value<S> h, diff::Value<S> s) const;

  LatentState<S> initial_state(int batch = 1) const;

 private:
  diff::Value<S> leaf(diff::Graph<S>& g, const std::string& name) const;
  GaussParams<S> dist_head(diff::Graph<S>& g, diff::Value<S> input, const std::string& prefix) const;

  ModelConfig cfg_;
  mutable diff::ParamStore<S> store_;  // leaf() accumulates grads through it
};

// Posterior filtering through a segment. Observations/prev_actions/noise are
// time-major (L*B rows); returns one step per time index. The recurrence
// starts from (h0, s0) when given, else from zeros.
template <typename S>
std::vector<FilterStep<S>> filter(diff::Graph<S>& g, const Model<S>& model,
                                  const Tensor<S>& observations, const Tensor<S>& prev_actions,
                                  int batch, int length, const Tensor<S>& noise,
                                  const LatentState<S>* initial = nullptr);

// Open-loop latent rollout: h advances through the transition, s is drawn
// from the prior (zero noise when rng is null), the reward head is read at
// every step. Observations are never decoded.
template <typename S>
std::vector<S> imagine(const Model<S>& model, const LatentState<S>& start,
                       std::span<const grid::Action> actions, Rng* noise_rng);

// ELBO training loss over one segment batch: pixel and reward
// sum-of-squared-error terms averaged over the batch, plus the per-step
// dimension-summed KL clamped below at free_nats and scaled by kl_weight.
template <typename S>
LossValues<S> elbo_loss(diff::Graph<S>& g, const Model<S>& model, const ElboBatch<S>& batch,
                        const Tensor<S>& noise);

// One training epoch: `batches` sampled segment batches, each with a
// forward filter, ELBO, backward pass, global-norm clip and Adam update.
// Returns the loss breakdown averaged over the epoch.
template <typename S>
LossBreakdown train_epoch(Model<S>& model, const replay::ReplayBuffer& buffer,
                          diff::Adam<S>& optimizer, Rng& rng, int batch, int length,
                          int batches = 1, double grad_clip = 1000.0);

// Single-step posterior update for acting. prev_action < 0 encodes an
// episode start (zero action, zero initial latent unless prev is given).
// The stochastic state is the posterior mean unless noise is supplied.
template <typename S>
LatentState<S> posterior_step(const Model<S>& model, const LatentState<S>* prev, int prev_action,
                              const Tensor<S>& observation, const Tensor<S>* noise = nullptr);

// Planner adapter: latent rollouts from a fixed start state. Chunks of
// candidates run as one batched forward pass; each candidate draws prior
// noise from its own key-derived stream, so fitness values are independent
// of chunk scheduling.
class RssmForwardModel final : public plan::ForwardModel {
 public:
  RssmForwardModel(const Model<float>& model, LatentState<float> start)
      : model_(model), start_(std::move(start)) {}

  double rollout_return(std::span<const grid::Action> actions,
                        std::uint64_t noise_key) const override;

  void rollout_returns(std::span<const plan::ActionSequence> chunk,
                       std::span<const std::uint64_t> noise_keys,
                       std::span<double> out) const override;

 private:
  const Model<float>& model_;
  LatentState<float> start_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace evoplan::rssm
