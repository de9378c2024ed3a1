#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "evoplan/tensor.hpp"

namespace evoplan::diff {

template <typename S>
class Graph;

namespace detail {

template <typename S>
struct Node {
  Tensor<S> out;                     // owned result; unused when alias is set
  const Tensor<S>* alias = nullptr;  // leaf data living outside the graph
  Tensor<S>* grad_sink = nullptr;    // external gradient accumulator (parameters)
  Tensor<S> grad;
  std::function<void()> backprop;
  bool needs_grad = false;

  const Tensor<S>& data() const { return alias ? *alias : out; }
  Tensor<S>& grad_ref() { return grad_sink ? *grad_sink : grad; }
};

}  // namespace detail

// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
template <typename S>
struct Value {
  detail::Node<S>* node = nullptr;
  Graph<S>* graph = nullptr;

  bool defined() const { return node != nullptr; }
  const Tensor<S>& data() const { return node->data(); }
  const Tensor<S>& grad() const { return node->grad_ref(); }
  const Shape& shape() const { return node->data().shape; }
  std::int64_t numel() const { return node->data().numel(); }
};

// Dynamically built reverse-mode computation graph. Nodes are created in
// topological order, so the backward pass is a reverse sweep. Construction
// and backward are single-threaded; a graph built with grads disabled only
// runs forward math and records nothing.
template <typename S>
class Graph {
 public:
  explicit Graph(bool enable_grads = true) : grads_(enable_grads) {}

  bool grads_enabled() const { return grads_; }
  size_t size() const { return nodes_.size(); }

  Value<S> input(Tensor<S> t) {
    auto& n = nodes_.emplace_back();
    n.out = std::move(t);
    return {&n, this};
  }

  // Leaf over externally owned data; no gradient is tracked.
  Value<S> input_view(const Tensor<S>& t) {
    auto& n = nodes_.emplace_back();
    n.alias = &t;
    return {&n, this};
  }

  // Trainable leaf: data is read from `value`, gradients accumulate into
  // `grad` (resized and zeroed here if needed).
  Value<S> leaf(const Tensor<S>& value, Tensor<S>& grad) {
    auto& n = nodes_.emplace_back();
    n.alias = &value;
    if (grads_) {
      n.needs_grad = true;
      if (grad.shape != value.shape) grad = Tensor<S>(value.shape);
      n.grad_sink = &grad;
    }
    return {&n, this};
  }

  // Reverse sweep from a scalar loss node. Parameter gradients accumulate
  // into their sinks; caller zeroes those between steps.
  void backward(Value<S> loss) {
    if (!grads_) throw std::logic_error("backward on a no-grad graph");
    if (loss.node->data().numel() != 1)
      throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.node->needs_grad) return;  // loss independent of any parameter
    loss.node->grad_ref().fill(S(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->backprop) it->backprop();
  }

 private:
  template <typename T>
  friend detail::Node<T>& graph_emplace(Graph<T>&, const std::vector<Value<T>>&, Shape);

  std::deque<detail::Node<S>> nodes_;
  bool grads_;
};

namespace detail {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<EMat<S>>;
template <typename S>
using CMapM = Eigen::Map<const EMat<S>>;

}  // namespace detail

template <typename S>
detail::Node<S>& graph_emplace(Graph<S>& g, const std::vector<Value<S>>& parents, Shape out_shape) {
  auto& n = g.nodes_.emplace_back();
  n.out = Tensor<S>(std::move(out_shape));
  if (g.grads_enabled())
    for (const auto& p : parents)
      if (p.node->needs_grad) {
        n.needs_grad = true;
        n.grad = Tensor<S>(n.out.shape);
        break;
      }
  return n;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S, typename Fwd, typename Bwd>
Value<S> unary_op(Value<S> x, Fwd fwd, Bwd bwd, const char* /*name*/) {
  auto& n = graph_emplace(*x.graph, {x}, x.shape());
  const S* xd = x.data().ptr();
  S* od = n.out.ptr();
  const std::int64_t m = n.out.numel();
  for (std::int64_t i = 0; i < m; ++i) od[i] = fwd(xd[i]);
  if (n.needs_grad)
    n.backprop = [xn = x.node, on = &n, bwd, m] {
      const S* xd = xn->data().ptr();
      const S* od = on->data().ptr();
      const S* g = on->grad_ref().ptr();
      S* xg = xn->grad_ref().ptr();
      for (std::int64_t i = 0; i < m; ++i) xg[i] += g[i] * bwd(xd[i], od[i]);
    };
  return {&n, x.graph};
}

template <typename S>
Value<S> relu(Value<S> x) {
  return unary_op(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); }, "relu");
}

template <typename S>
Value<S> sigmoid(Value<S> x) {
  return unary_op(
      x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S, S o) { return o * (S(1) - o); }, "sigmoid");
}

template <typename S>
Value<S> tanh_op(Value<S> x) {
  return unary_op(
      x, [](S v) { return std::tanh(v); }, [](S, S o) { return S(1) - o * o; }, "tanh");
}

template <typename S>
Value<S> softplus(Value<S> x) {
  return unary_op(
      x, [](S v) { return v > S(20) ? v : std::log1p(std::exp(v)); },
      [](S v, S) { return S(1) / (S(1) + std::exp(-v)); }, "softplus");
}

template <typename S>
Value<S> clamp_min(Value<S> x, S floor) {
  return unary_op(
      x, [floor](S v) { return v > floor ? v : floor; },
      [floor](S v, S) { return v > floor ? S(1) : S(0); }, "clamp_min");
}

template <typename S>
Value<S> add_scalar(Value<S> x, S c) {
  return unary_op(
      x, [c](S v) { return v + c; }, [](S, S) { return S(1); }, "add_scalar");
}

template <typename S>
Value<S> mul_scalar(Value<S> x, S c) {
  return unary_op(
      x, [c](S v) { return v * c; }, [c](S, S) { return c; }, "mul_scalar");
}

template <typename S>
Value<S> add(Value<S> a, Value<S> b) {
  check_same_shape(a.shape(), b.shape(), "add");
  auto& n = graph_emplace(*a.graph, {a, b}, a.shape());
  const std::int64_t m = n.out.numel();
  for (std::int64_t i = 0; i < m; ++i) n.out[i] = a.data()[i] + b.data()[i];
  if (n.needs_grad)
    n.backprop = [an = a.node, bn = b.node, on = &n, m] {
      const S* g = on->grad_ref().ptr();
      if (an->needs_grad) {
        S* ag = an->grad_ref().ptr();
        for (std::int64_t i = 0; i < m; ++i) ag[i] += g[i];
      }
      if (bn->needs_grad) {
        S* bg = bn->grad_ref().ptr();
        for (std::int64_t i = 0; i < m; ++i) bg[i] += g[i];
      }
    };
  return {&n, a.graph};
}

template <typename S>
Value<S> sub(Value<S> a, Value<S> b) {
  check_same_shape(a.shape(), b.shape(), "sub");
  auto& n = graph_emplace(*a.graph, {a, b}, a.shape());
  const std::int64_t m = n.out.numel();
  for (std::int64_t i = 0; i < m; ++i) n.out[i] = a.data()[i] - b.data()[i];
  if (n.needs_grad)
    n.backprop = [an = a.node, bn = b.node, on = &n, m] {
      const S* g = on->grad_ref().ptr();
      if (an->needs_grad) {
        S* ag = an->grad_ref().ptr();
        for (std::int64_t i = 0; i < m; ++i) ag[i] += g[i];
      }
      if (bn->needs_grad) {
        S* bg = bn->grad_ref().ptr();
        for (std::int64_t i = 0; i < m; ++i) bg[i] -= g[i];
      }
    };
  return {&n, a.graph};
}

// Hadamard product.
template <typename S>
Value<S> mul(Value<S> a, Value<S> b) {
  check_same_shape(a.shape(), b.shape(), "mul");
  auto& n = graph_emplace(*a.graph, {a, b}, a.shape());
  const std::int64_t m = n.out.numel();
  for (std::int64_t i = 0; i < m; ++i) n.out[i] = a.data()[i] * b.data()[i];
  if (n.needs_grad)
    n.backprop = [an = a.node, bn = b.node, on = &n, m] {
      const S* g = on->grad_ref().ptr();
      const S* ad = an->data().ptr();
      const S* bd = bn->data().ptr();
      if (an->needs_grad) {
        S* ag = an->grad_ref().ptr();
        for (std::int64_t i = 0; i < m; ++i) ag[i] += g[i] * bd[i];
      }
      if (bn->needs_grad) {
        S* bg = bn->grad_ref().ptr();
        for (std::int64_t i = 0; i < m; ++i) bg[i] += g[i] * ad[i];
      }
    };
  return {&n, a.graph};
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
Value<S> reshape(Value<S> x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto& n = graph_emplace(*x.graph, {x}, std::move(shape));
  n.out.data = x.data().data;
  if (n.needs_grad)
    n.backprop = [xn = x.node, on = &n] {
      if (!xn->needs_grad) return;
      const S* g = on->grad_ref().ptr();
      S* xg = xn->grad_ref().ptr();
      const std::int64_t m = on->out.numel();
      for (std::int64_t i = 0; i < m; ++i) xg[i] += g[i];
    };
  return {&n, x.graph};
}

template <typename S>
Value<S> flatten2d(Value<S> x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ShapeError("flatten2d: need rank >= 2, got " + shape_str(s));
  int rest = 1;
  for (size_t i = 1; i < s.size(); ++i) rest *= s[i];
  return reshape(x, {s[0], rest});
}

// Contiguous row slice along axis 0.
template <typename S>
Value<S> rows(Value<S> x, int begin, int count) {
  const auto& s = x.shape();
  if (s.empty() || begin < 0 || count < 1 || begin + count > s[0])
    throw ShapeError("rows: slice [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of " + shape_str(s));
  Shape os = s;
  os[0] = count;
  std::int64_t stride = x.numel() / s[0];
  auto& n = graph_emplace(*x.graph, {x}, std::move(os));
  std::copy_n(x.data().ptr() + begin * stride, count * stride, n.out.ptr());
  if (n.needs_grad)
    n.backprop = [xn = x.node, on = &n, begin, stride] {
      const S* g = on->grad_ref().ptr();
      S* xg = xn->grad_ref().ptr() + begin * stride;
      const std::int64_t m = on->out.numel();
      for (std::int64_t i = 0; i < m; ++i) xg[i] += g[i];
    };
  return {&n, x.graph};
}

// Column slice of a 2-d tensor.
template <typename S>
Value<S> cols(Value<S> x, int begin, int count) {
  const auto& s = x.shape();
  if (s.size() != 2 || begin < 0 || count < 1 || begin + count > s[1])
    throw ShapeError("cols: slice [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of " + shape_str(s));
  const int rows_n = s[0], w = s[1];
  auto& n = graph_emplace(*x.graph, {x}, {rows_n, count});
  for (int r = 0; r < rows_n; ++r)
    std::copy_n(x.data().ptr() + r * w + begin, count, n.out.ptr() + r * count);
  if (n.needs_grad)
    n.backprop = [xn = x.node, on = &n, rows_n, w, begin, count] {
      const S* g = on->grad_ref().ptr();
      S* xg = xn->grad_ref().ptr();
      for (int r = 0; r < rows_n; ++r)
        for (int c = 0; c < count; ++c) xg[r * w + begin + c] += g[r * count + c];
    };
  return {&n, x.graph};
}

// Concatenate along `axis`; shapes must agree on every other axis.
template <typename S>
Value<S> concat(const std::vector<Value<S>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size()))
    throw ShapeError("concat: bad axis " + std::to_string(axis) + " for " + shape_str(s0));
  Shape os = s0;
  os[axis] = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    os[axis] += s[axis];
  }
  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  std::int64_t tail = 1;
  for (size_t i = axis + 1; i < s0.size(); ++i) tail *= s0[i];

  auto& n = graph_emplace(*xs[0].graph, xs, std::move(os));
  std::vector<std::int64_t> chunk(xs.size());
  std::int64_t total_chunk = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    chunk[i] = xs[i].shape()[axis] * tail;
    total_chunk += chunk[i];
  }
  for (std::int64_t o = 0; o < outer; ++o) {
    S* dst = n.out.ptr() + o * total_chunk;
    for (size_t i = 0; i < xs.size(); ++i) {
      std::copy_n(xs[i].data().ptr() + o * chunk[i], chunk[i], dst);
      dst += chunk[i];
    }
  }
  if (n.needs_grad) {
    std::vector<detail::Node<S>*> parents;
    for (const auto& x : xs) parents.push_back(x.node);
    n.backprop = [parents, on = &n, chunk, total_chunk, outer] {
      const S* g = on->grad_ref().ptr();
      for (std::int64_t o = 0; o < outer; ++o) {
        const S* src = g + o * total_chunk;
        for (size_t i = 0; i < parents.size(); ++i) {
          if (parents[i]->needs_grad) {
            S* xg = parents[i]->grad_ref().ptr() + o * chunk[i];
            for (std::int64_t j = 0; j < chunk[i]; ++j) xg[j] += src[j];
          }
          src += chunk[i];
        }
      }
    };
  }
  return {&n, xs[0].graph};
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

template <typename S>
Value<S> sum_all(Value<S> x) {
  auto& n = graph_emplace(*x.graph, {x}, {1});
  S acc = S(0);
  const std::int64_t m = x.numel();
  const S* xd = x.data().ptr();
  for (std::int64_t i = 0; i < m; ++i) acc += xd[i];
  n.out[0] = acc;
  if (n.needs_grad)
    n.backprop = [xn = x.node, on = &n, m] {
      const S g = on->grad_ref()[0];
      S* xg = xn->grad_ref().ptr();
      for (std::int64_t i = 0; i < m; ++i) xg[i] += g;
    };
  return {&n, x.graph};
}

// Sum of squared errors against a constant target, reduced to a scalar.
template <typename S>
Value<S> sse(Value<S> pred, const Tensor<S>& target) {
  check_same_shape(pred.shape(), target.shape, "sse");
  auto& n = graph_emplace(*pred.graph, {pred}, {1});
  const std::int64_t m = pred.numel();
  const S* pd = pred.data().ptr();
  const S* td = target.ptr();
  S acc = S(0);
  for (std::int64_t i = 0; i < m; ++i) {
    const S d = pd[i] - td[i];
    acc += d * d;
  }
  n.out[0] = acc;
  if (n.needs_grad)
    n.backprop = [pn = pred.node, on = &n, td, m] {
      const S g = on->grad_ref()[0];
      const S* pd = pn->data().ptr();
      S* pg = pn->grad_ref().ptr();
      for (std::int64_t i = 0; i < m; ++i) pg[i] += g * S(2) * (pd[i] - td[i]);
    };
  return {&n, pred.graph};
}

// Diagonal-Gaussian KL(q || p), summed over the feature axis: inputs are
// (B, D), output is (B,). Standard deviations must be strictly positive.
template <typename S>
Value<S> gaussian_kl(Value<S> mean_q, Value<S> std_q, Value<S> mean_p, Value<S> std_p) {
  check_same_shape(mean_q.shape(), std_q.shape(), "gaussian_kl");
  check_same_shape(mean_q.shape(), mean_p.shape(), "gaussian_kl");
  check_same_shape(mean_q.shape(), std_p.shape(), "gaussian_kl");
  if (mean_q.shape().size() != 2) throw ShapeError("gaussian_kl: expected (B, D) inputs");
  const int b = mean_q.shape()[0], d = mean_q.shape()[1];
  for (std::int64_t i = 0; i < std_q.numel(); ++i)
    if (!(std_q.data()[i] > S(0)) || !(std_p.data()[i] > S(0)))
      throw std::domain_error("gaussian_kl: standard deviations must be strictly positive");

  auto& n = graph_emplace(*mean_q.graph, {mean_q, std_q, mean_p, std_p}, {b});
  const S* mq = mean_q.data().ptr();
  const S* sq = std_q.data().ptr();
  const S* mp = mean_p.data().ptr();
  const S* sp = std_p.data().ptr();
  for (int r = 0; r < b; ++r) {
    S acc = S(0);
    for (int c = 0; c < d; ++c) {
      const std::int64_t i = static_cast<std::int64_t>(r) * d + c;
      const S dm = mq[i] - mp[i];
      acc += std::log(sp[i] / sq[i]) + (sq[i] * sq[i] + dm * dm) / (S(2) * sp[i] * sp[i]) - S(0.5);
    }
    n.out[r] = acc;
  }
  if (n.needs_grad)
    n.backprop = [qm = mean_q.node, qs = std_q.node, pm = mean_p.node, ps = std_p.node, on = &n, b,
                  d] {
      const S* g = on->grad_ref().ptr();
      const S* mq = qm->data().ptr();
      const S* sq = qs->data().ptr();
      const S* mp = pm->data().ptr();
      const S* sp = ps->data().ptr();
      for (int r = 0; r < b; ++r) {
        const S gr = g[r];
        for (int c = 0; c < d; ++c) {
          const std::int64_t i = static_cast<std::int64_t>(r) * d + c;
          const S dm = mq[i] - mp[i];
          const S sp2 = sp[i] * sp[i];
          if (qm->needs_grad) qm->grad_ref()[i] += gr * dm / sp2;
          if (pm->needs_grad) pm->grad_ref()[i] -= gr * dm / sp2;
          if (qs->needs_grad) qs->grad_ref()[i] += gr * (sq[i] / sp2 - S(1) / sq[i]);
          if (ps->needs_grad)
            ps->grad_ref()[i] += gr * (S(1) / sp[i] - (sq[i] * sq[i] + dm * dm) / (sp2 * sp[i]));
        }
      }
    };
  return {&n, mean_q.graph};
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

// y = x W^T + b with x (B, In), W (Out, In), b (Out).
template <typename S>
Value<S> dense(Value<S> x, Value<S> weights, Value<S> bias) {
  const auto& xs = x.shape();
  const auto& ws = weights.shape();
  const auto& bs = bias.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw ShapeError("dense: x " + shape_str(xs) + " incompatible with weights " + shape_str(ws));
  if (bs.size() != 1 || bs[0] != ws[0])
    throw ShapeError("dense: bias " + shape_str(bs) + " incompatible with weights " +
                     shape_str(ws));
  const int b = xs[0], in = xs[1], out = ws[0];
  auto& n = graph_emplace(*x.graph, {x, weights, bias}, {b, out});
  detail::CMapM<S> xm(x.data().ptr(), b, in);
  detail::CMapM<S> wm(weights.data().ptr(), out, in);
  detail::MapM<S> ym(n.out.ptr(), b, out);
  ym.noalias() = xm * wm.transpose();
  const S* bd = bias.data().ptr();
  for (int r = 0; r < b; ++r)
    for (int c = 0; c < out; ++c) n.out[static_cast<std::int64_t>(r) * out + c] += bd[c];
  if (n.needs_grad)
    n.backprop = [xn = x.node, wn = weights.node, bn = bias.node, on = &n, b, in, out] {
      detail::CMapM<S> g(on->grad_ref().ptr(), b, out);
      if (xn->needs_grad) {
        detail::CMapM<S> wm(wn->data().ptr(), out, in);
        detail::MapM<S> xg(xn->grad_ref().ptr(), b, in);
        xg.noalias() += g * wm;
      }
      if (wn->needs_grad) {
        detail::CMapM<S> xm(xn->data().ptr(), b, in);
        detail::MapM<S> wg(wn->grad_ref().ptr(), out, in);
        wg.noalias() += g.transpose() * xm;
      }
      if (bn->needs_grad) {
        S* bg = bn->grad_ref().ptr();
        for (int r = 0; r < b; ++r)
          for (int c = 0; c < out; ++c) bg[c] += g(r, c);
      }
    };
  return {&n, x.graph};
}

namespace detail {

// Gather k x k patches at the given stride: x (C, imgH, imgW) row-major into
// col (C*k*k, colH*colW) with col[(c*k+ky)*k+kx][p] = x[c][py*s+ky][px*s+kx].
template <typename S>
void im2col(const S* x, S* col, int c_n, int img_h, int img_w, int k, int stride, int col_h,
            int col_w) {
  const std::int64_t npatch = static_cast<std::int64_t>(col_h) * col_w;
  for (int c = 0; c < c_n; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        S* dst = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * npatch;
        for (int py = 0; py < col_h; ++py) {
          const S* src = x + (static_cast<std::int64_t>(c) * img_h + py * stride + ky) * img_w + kx;
          for (int px = 0; px < col_w; ++px) dst[py * col_w + px] = src[px * stride];
        }
      }
}

// Scatter-add, the exact adjoint of im2col.
template <typename S>
void col2im_add(const S* col, S* x, int c_n, int img_h, int img_w, int k, int stride, int col_h,
                int col_w) {
  const std::int64_t npatch = static_cast<std::int64_t>(col_h) * col_w;
  for (int c = 0; c < c_n; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const S* src = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * npatch;
        for (int py = 0; py < col_h; ++py) {
          S* dst = x + (static_cast<std::int64_t>(c) * img_h + py * stride + ky) * img_w + kx;
          for (int px = 0; px < col_w; ++px) dst[px * stride] += src[py * col_w + px];
        }
      }
}

}  // namespace detail

// Valid (unpadded) 2-d convolution: x (B, Cin, H, W), kernels (Cout, Cin, k, k),
// output spatial size floor((n - k) / stride) + 1.
template <typename S>
Value<S> conv2d(Value<S> x, Value<S> kernels, int stride) {
  const auto& xs = x.shape();
  const auto& ks = kernels.shape();
  if (xs.size() != 4 || ks.size() != 4 || ks[2] != ks[3] || xs[1] != ks[1])
    throw ShapeError("conv2d: x " + shape_str(xs) + " incompatible with kernels " + shape_str(ks));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const int b = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const int cout = ks[0], k = ks[2];
  if (h < k || w < k)
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than input " +
                     shape_str(xs));
  const int oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  auto& n = graph_emplace(*x.graph, {x, kernels}, {b, cout, oh, ow});

  const std::int64_t xstride = static_cast<std::int64_t>(cin) * h * w;
  const std::int64_t ostride = static_cast<std::int64_t>(cout) * oh * ow;
  const int krows = cin * k * k;
  const std::int64_t npatch = static_cast<std::int64_t>(oh) * ow;
  std::vector<S> col(static_cast<size_t>(krows) * npatch);
  detail::CMapM<S> km(kernels.data().ptr(), cout, krows);
  for (int i = 0; i < b; ++i) {
    detail::im2col(x.data().ptr() + i * xstride, col.data(), cin, h, w, k, stride, oh, ow);
    detail::CMapM<S> cm(col.data(), krows, npatch);
    detail::MapM<S> om(n.out.ptr() + i * ostride, cout, npatch);
    om.noalias() = km * cm;
  }
  if (n.needs_grad)
    n.backprop = [xn = x.node, kn = kernels.node, on = &n, b, cin, h, w, cout, k, stride, oh, ow,
                  xstride, ostride, krows, npatch] {
      std::vector<S> col(static_cast<size_t>(krows) * npatch);
      for (int i = 0; i < b; ++i) {
        detail::CMapM<S> g(on->grad_ref().ptr() + i * ostride, cout, npatch);
        if (kn->needs_grad) {
          detail::im2col(xn->data().ptr() + i * xstride, col.data(), cin, h, w, k, stride, oh, ow);
          detail::CMapM<S> cm(col.data(), krows, npatch);
          detail::MapM<S> kg(kn->grad_ref().ptr(), cout, krows);
          kg.noalias() += g * cm.transpose();
        }
        if (xn->needs_grad) {
          detail::CMapM<S> km(kn->data().ptr(), cout, krows);
          detail::MapM<S> cm(col.data(), krows, npatch);
          cm.noalias() = km.transpose() * g;
          detail::col2im_add(col.data(), xn->grad_ref().ptr() + i * xstride, cin, h, w, k, stride,
                             oh, ow);
        }
      }
    };
  return {&n, x.graph};
}

// Transposed convolution: x (B, Cin, h, w), kernels (Cin, Cout, k, k),
// output spatial size (n - 1) * stride + k.
template <typename S>
Value<S> deconv2d(Value<S> x, Value<S> kernels, int stride) {
  const auto& xs = x.shape();
  const auto& ks = kernels.shape();
  if (xs.size() != 4 || ks.size() != 4 || ks[2] != ks[3] || xs[1] != ks[0])
    throw ShapeError("deconv2d: x " + shape_str(xs) + " incompatible with kernels " +
                     shape_str(ks));
  if (stride < 1) throw ShapeError("deconv2d: stride must be >= 1");
  const int b = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const int cout = ks[1], k = ks[2];
  const int oh = (h - 1) * stride + k, ow = (w - 1) * stride + k;
  auto& n = graph_emplace(*x.graph, {x, kernels}, {b, cout, oh, ow});

  const std::int64_t xstride = static_cast<std::int64_t>(cin) * h * w;
  const std::int64_t ostride = static_cast<std::int64_t>(cout) * oh * ow;
  const int crows = cout * k * k;
  const std::int64_t npatch = static_cast<std::int64_t>(h) * w;
  std::vector<S> col(static_cast<size_t>(crows) * npatch);
  detail::CMapM<S> km(kernels.data().ptr(), cin, crows);
  n.out.zero();
  for (int i = 0; i < b; ++i) {
    detail::CMapM<S> xm(x.data().ptr() + i * xstride, cin, npatch);
    detail::MapM<S> cm(col.data(), crows, npatch);
    cm.noalias() = km.transpose() * xm;
    detail::col2im_add(col.data(), n.out.ptr() + i * ostride, cout, oh, ow, k, stride, h, w);
  }
  if (n.needs_grad)
    n.backprop = [xn = x.node, kn = kernels.node, on = &n, b, cin, h, w, cout, k, stride, oh, ow,
                  xstride, ostride, crows, npatch] {
      std::vector<S> col(static_cast<size_t>(crows) * npatch);
      for (int i = 0; i < b; ++i) {
        detail::im2col(on->grad_ref().ptr() + i * ostride, col.data(), cout, oh, ow, k, stride, h,
                       w);
        detail::CMapM<S> cm(col.data(), crows, npatch);
        if (xn->needs_grad) {
          detail::CMapM<S> km(kn->data().ptr(), cin, crows);
          detail::MapM<S> xg(xn->grad_ref().ptr() + i * xstride, cin, npatch);
          xg.noalias() += km * cm;
        }
        if (kn->needs_grad) {
          detail::CMapM<S> xm(xn->data().ptr() + i * xstride, cin, npatch);
          detail::MapM<S> kg(kn->grad_ref().ptr(), cin, crows);
          kg.noalias() += xm * cm.transpose();
        }
      }
    };
  return {&n, x.graph};
}

// Per-channel bias for (B, C, H, W) feature maps.
template <typename S>
Value<S> bias_channel(Value<S> x, Value<S> bias) {
  const auto& xs = x.shape();
  const auto& bs = bias.shape();
  if (xs.size() != 4 || bs.size() != 1 || bs[0] != xs[1])
    throw ShapeError("bias_channel: bias " + shape_str(bs) + " incompatible with " +
                     shape_str(xs));
  const int b = xs[0], c_n = xs[1];
  const std::int64_t plane = static_cast<std::int64_t>(xs[2]) * xs[3];
  auto& n = graph_emplace(*x.graph, {x, bias}, xs);
  const S* xd = x.data().ptr();
  const S* bd = bias.data().ptr();
  for (int i = 0; i < b; ++i)
    for (int c = 0; c < c_n; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(i) * c_n + c) * plane;
      for (std::int64_t p = 0; p < plane; ++p) n.out[off + p] = xd[off + p] + bd[c];
    }
  if (n.needs_grad)
    n.backprop = [xn = x.node, bn = bias.node, on = &n, b, c_n, plane] {
      const S* g = on->grad_ref().ptr();
      if (xn->needs_grad) {
        S* xg = xn->grad_ref().ptr();
        const std::int64_t m = on->out.numel();
        for (std::int64_t i = 0; i < m; ++i) xg[i] += g[i];
      }
      if (bn->needs_grad) {
        S* bg = bn->grad_ref().ptr();
        for (int i = 0; i < b; ++i)
          for (int c = 0; c < c_n; ++c) {
            const std::int64_t off = (static_cast<std::int64_t>(i) * c_n + c) * plane;
            S acc = S(0);
            for (std::int64_t p = 0; p < plane; ++p) acc += g[off + p];
            bg[c] += acc;
          }
      }
    };
  return {&n, x.graph};
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

// Reparameterized draw from N(mean, stddev^2) with externally supplied
// standard-normal noise; gradients flow to mean and stddev.
template <typename S>
Value<S> gaussian_sample(Value<S> mean, Value<S> stddev, const Tensor<S>& noise) {
  check_same_shape(mean.shape(), stddev.shape(), "gaussian_sample");
  check_same_shape(mean.shape(), noise.shape, "gaussian_sample");
  for (std::int64_t i = 0; i < stddev.numel(); ++i)
    if (!(stddev.data()[i] > S(0)))
      throw std::domain_error("gaussian_sample: stddev must be strictly positive");
  Value<S> eps = mean.graph->input_view(noise);
  return add(mean, mul(stddev, eps));
}

template <typename S>
struct GruParams {
  Value<S> w_input;   // (3H, In)  gate order r, z, n
  Value<S> w_hidden;  // (3H, H)
  Value<S> b_input;   // (3H)
  Value<S> b_hidden;  // (3H)
};

// Standard GRU cell: r,z = sigmoid gates, candidate n = tanh, new hidden
// h' = (1 - z) * n + z * h.
template <typename S>
Value<S> gated_recurrent_cell(Value<S> input, Value<S> hidden, const GruParams<S>& p) {
  const int hd = hidden.shape()[1];
  Value<S> gx = dense(input, p.w_input, p.b_input);
  Value<S> gh = dense(hidden, p.w_hidden, p.b_hidden);
  Value<S> r = sigmoid(add(cols(gx, 0, hd), cols(gh, 0, hd)));
  Value<S> z = sigmoid(add(cols(gx, hd, hd), cols(gh, hd, hd)));
  Value<S> n = tanh_op(add(cols(gx, 2 * hd, hd), mul(r, cols(gh, 2 * hd, hd))));
  return add(sub(n, mul(z, n)), mul(z, hidden));
}

}  // namespace evoplan::diff
