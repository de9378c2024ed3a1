#pragma once

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "evoplan/graph.hpp"
#include "evoplan/rng.hpp"
#include "evoplan/tensor.hpp"

namespace evoplan::diff {

template <typename S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
};

// Ordered collection of named trainable tensors. Order is fixed at
// registration time and defines the checkpoint layout.
template <typename S>
class ParamStore {
 public:
  Param<S>& add(std::string name, Shape shape) {
    auto p = std::make_unique<Param<S>>();
    p->name = std::move(name);
    p->value = Tensor<S>(shape);
    p->grad = Tensor<S>(std::move(shape));
    params_.push_back(std::move(p));
    return *params_.back();
  }

  size_t size() const { return params_.size(); }
  Param<S>& at(size_t i) { return *params_[i]; }
  const Param<S>& at(size_t i) const { return *params_[i]; }

  Param<S>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p->grad.zero();
  }

  // Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)). fan_in is the
  // product of all dims past the first (dense rows are output features,
  // conv kernels are (Cout, Cin, k, k)); deconv kernels (Cin, Cout, k, k)
  // pass their fan-in explicitly.
  static void init_uniform(Param<S>& p, Rng& rng, std::int64_t fan_in = 0) {
    if (fan_in == 0) {
      fan_in = 1;
      for (size_t i = 1; i < p.value.shape.size(); ++i) fan_in *= p.value.shape[i];
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : p.value.data) v = static_cast<S>((rng.uniform() * 2.0 - 1.0) * bound);
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Param<S>>> params_;
};

// Rescales all gradients in place when their global L2 norm exceeds
// max_norm; returns the pre-clip norm.
template <typename S>
double clip_grad_norm(ParamStore<S>& params, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  double sq = 0;
  for (const auto& p : params)
    for (S g : p->grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& p : params)
      for (S& g : p->grad.data) g *= scale;
  }
  return norm;
}

// Adam with bias correction. Moment buffers are keyed by parameter index.
template <typename S>
class Adam {
 public:
  explicit Adam(ParamStore<S>& params, double lr = 6e-4, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-4)
      : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    for (const auto& p : params_) {
      m_.emplace_back(p->value.shape);
      v_.emplace_back(p->value.shape);
    }
  }

  void step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, step_count_);
    const double bc2 = 1.0 - std::pow(beta2_, step_count_);
    size_t idx = 0;
    for (auto& p : params_) {
      Tensor<S>& m = m_[idx];
      Tensor<S>& v = v_[idx];
      ++idx;
      const std::int64_t n = p->value.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        const double g = p->grad[i];
        const double mi = beta1_ * m[i] + (1.0 - beta1_) * g;
        const double vi = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        p->value[i] -= static_cast<S>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
      }
    }
  }

  long step_count() const { return step_count_; }
  double learning_rate() const { return lr_; }
  double epsilon() const { return eps_; }

 private:
  ParamStore<S>& params_;
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

// ---------------------------------------------------------------------------
// checkpoints: text manifest (name + shape per parameter, plus free-form
// meta lines), then a flat little-endian float32 blob in manifest order.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

template <typename S>
void save_checkpoint(const ParamStore<S>& params, const std::string& path,
                     const std::map<std::string, std::string>& meta = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f << "evoplan-checkpoint 1\n";
  for (const auto& [k, v] : meta) f << "meta " << k << ' ' << v << '\n';
  for (const auto& p : params) {
    f << "param " << p->name;
    for (int d : p->value.shape) f << ' ' << d;
    f << '\n';
  }
  f << "data\n";
  for (const auto& p : params) {
    if constexpr (std::is_same_v<S, float>) {
      f.write(reinterpret_cast<const char*>(p->value.ptr()),
              static_cast<std::streamsize>(p->value.numel() * sizeof(float)));
    } else {
      Tensor<float> t = p->value.template cast<float>();
      f.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

// Reads manifest meta entries without loading tensor data.
inline std::map<std::string, std::string> read_checkpoint_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string line;
  std::getline(f, line);
  if (line.rfind("evoplan-checkpoint", 0) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::map<std::string, std::string> meta;
  while (std::getline(f, line) && line != "data") {
    if (line.rfind("meta ", 0) == 0) {
      const auto sp = line.find(' ', 5);
      if (sp != std::string::npos) meta[line.substr(5, sp - 5)] = line.substr(sp + 1);
    }
  }
  return meta;
}

template <typename S>
void load_checkpoint(ParamStore<S>& params, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string line;
  std::getline(f, line);
  if (line.rfind("evoplan-checkpoint", 0) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::vector<std::pair<std::string, Shape>> manifest;
  while (std::getline(f, line) && line != "data") {
    if (line.rfind("param ", 0) != 0) continue;
    std::istringstream is(line.substr(6));
    std::string name;
    is >> name;
    Shape shape;
    int d;
    while (is >> d) shape.push_back(d);
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  if (manifest.size() != params.size())
    throw std::runtime_error("checkpoint lists " + std::to_string(manifest.size()) +
                             " parameters, model has " + std::to_string(params.size()));
  for (auto& [name, shape] : manifest) {
    Param<S>* p = params.find(name);
    if (!p) throw std::runtime_error("checkpoint parameter not in model: " + name);
    if (p->value.shape != shape)
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": file " +
                               shape_str(shape) + " vs model " + shape_str(p->value.shape));
    Tensor<float> t(shape);
    f.read(reinterpret_cast<char*>(t.ptr()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw std::runtime_error("checkpoint payload truncated: " + path);
    if constexpr (std::is_same_v<S, float>)
      p->value = std::move(t);
    else
      p->value = t.template cast<S>();
  }
}

}  // namespace evoplan::diff
