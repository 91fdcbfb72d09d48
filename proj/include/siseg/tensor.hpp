#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "siseg/error.hpp"

// Minimal reverse-mode autodiff. A Tensor is a shared handle to a graph
// node holding values, a gradient buffer of the same size, and the
// recorded backward edge. Ops are free functions that allocate the result
// node and capture their parents; backward() walks the graph once in
// reverse topological order. The scalar type is a template parameter:
// training runs in float, gradient checks in double.
//
// Graphs are rebuilt every forward pass; parameters are long-lived leaf
// tensors whose gradients accumulate until zero_grad().

namespace siseg::nn {

inline std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i)
    s += (i ? "," : "") + std::to_string(shape[i]);
  return s + ")";
}

template <typename T>
class Tensor {
 public:
  struct Node {
    std::vector<std::size_t> shape;
    std::vector<T> values;
    std::vector<T> grad;
    std::vector<std::shared_ptr<Node>> parents;
    // Pulls this node's grad into the parents' grad buffers.
    std::function<void(Node&)> backprop;
  };

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : node_(std::make_shared<Node>()) {
    node_->shape = std::move(shape);
    const std::size_t n = numel(node_->shape);
    node_->values.assign(n, fill);
    node_->grad.assign(n, T(0));
  }

  static Tensor from_values(std::vector<std::size_t> shape, std::vector<T> values) {
    if (numel(shape) != values.size())
      throw ShapeMismatch("value count " + std::to_string(values.size()) +
                          " does not fill shape " + shape_string(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->grad.assign(t.node_->values.size(), T(0));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::vector<T>& values() { return node_->values; }
  const std::vector<T>& values() const { return node_->values; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }

  // Scalar convenience for loss tensors.
  T item() const {
    if (size() != 1) throw NonScalarLoss("item() on tensor of size " + std::to_string(size()));
    return node_->values[0];
  }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  std::shared_ptr<Node> node() const { return node_; }

  // Allocates a result node wired to its parents; used by every op.
  static Tensor make_op(std::vector<std::size_t> shape,
                        std::vector<std::shared_ptr<Node>> parents,
                        std::function<void(Node&)> backprop) {
    Tensor t(std::move(shape));
    t.node_->parents = std::move(parents);
    t.node_->backprop = std::move(backprop);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from a scalar loss: seeds d(loss)/d(loss) = 1 and
/// accumulates gradients into every reachable node. Deterministic.
template <typename T>
void backward(const Tensor<T>& loss) {
  using Node = typename Tensor<T>::Node;
  if (loss.size() != 1)
    throw NonScalarLoss("backward() needs a scalar loss, got shape " +
                        shape_string(loss.shape()));

  // Iterative post-order DFS over parents.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  auto an = a.node(), bn = b.node();
  auto out = Tensor<T>::make_op(a.shape(), {an, bn}, [an, bn](auto& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      an->grad[i] += o.grad[i];
      bn->grad[i] += o.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values()[i] = an->values[i] + bn->values[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  auto an = a.node(), bn = b.node();
  auto out = Tensor<T>::make_op(a.shape(), {an, bn}, [an, bn](auto& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      an->grad[i] += o.grad[i] * bn->values[i];
      bn->grad[i] += o.grad[i] * an->values[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values()[i] = an->values[i] * bn->values[i];
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto xn = x.node();
  auto out = Tensor<T>::make_op({1}, {xn}, [xn](auto& o) {
    const T g = o.grad[0];
    for (auto& gx : xn->grad) gx += g;
  });
  T acc(0);
  for (T v : xn->values) acc += v;
  out.values()[0] = acc;
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto xn = x.node();
  auto out = Tensor<T>::make_op(x.shape(), {xn}, [xn](auto& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (xn->values[i] > T(0)) xn->grad[i] += o.grad[i];
  });
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values()[i] = xn->values[i] > T(0) ? xn->values[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto xn = x.node();
  auto out = Tensor<T>::make_op(x.shape(), {xn}, [xn](auto& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T y = o.values[i];
      xn->grad[i] += o.grad[i] * y * (T(1) - y);
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xn->values[i];
    // Stable on both tails.
    out.values()[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                : std::exp(v) / (T(1) + std::exp(v));
  }
  return out;
}

}  // namespace siseg::nn
