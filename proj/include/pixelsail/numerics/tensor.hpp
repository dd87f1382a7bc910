#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pixelsail/errors.hpp"

namespace pixelsail {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // sized lazily by the first backward pass that reaches the node
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
};

}  // namespace detail

/// Dense row-major float32 array with an optional reverse-mode gradient.
///
/// Tensors are handles: copying a Tensor shares the underlying buffer and graph
/// node. Results of differentiable ops remember their inputs only when at least
/// one input requires gradients, so inference builds no graph.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const float> data() const { return node_->data; }
  // Mutation is reserved for optimizer steps, initialisation and finite-difference probes.
  std::span<float> mutable_data() { return node_->data; }
  std::vector<float> to_vector() const { return node_->data; }

  float item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0f); }

  /// Same values, no history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  void backward() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared_node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse topological order of a computation graph, recorded from its root.
///
/// Replaying visits every recorded op once, in reverse recording order, and
/// accumulates into leaf gradients exactly once per replay.
class GradTape {
 public:
  static GradTape record(const Tensor& root) {
    GradTape tape;
    if (!root.requires_grad()) return tape;
    std::unordered_set<detail::Node*> seen;
    // iterative post-order DFS: parents are emitted before their consumers
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  void replay(const Tensor& root) const {
    if (order_.empty()) return;
    for (auto* node : order_) {
      if (node->is_leaf) {
        node->ensure_grad();
      } else {
        node->grad.assign(node->data.size(), 0.0f);
      }
    }
    auto* top = root.node();
    if (top->is_leaf) {
      for (auto& g : top->grad) g += 1.0f;
      return;
    }
    std::fill(top->grad.begin(), top->grad.end(), 1.0f);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      if (!(*it)->is_leaf && (*it)->backward) (*it)->backward(**it);
    }
  }

  std::size_t size() const { return order_.size(); }

 private:
  std::vector<detail::Node*> order_;
};

inline void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
  GradTape::record(*this).replay(*this);
}

namespace detail {

inline bool any_requires_grad(std::span<const Tensor> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

inline void check_finite([[maybe_unused]] const std::vector<float>& data,
                         [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  for (float v : data) assert(std::isfinite(v) && op);
#endif
}

/// Wraps an op's forward result. `backward` reads out.grad and accumulates into
/// the gradient of each parent that requires it (see grad_of).
inline Tensor make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward, const char* op = "op") {
  check_finite(data, op);
  Tensor out(std::move(shape), std::move(data), false);
  if (any_requires_grad(inputs)) {
    auto* node = out.node();
    node->requires_grad = true;
    node->is_leaf = false;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.shared_node());
    node->backward = std::move(backward);
  }
  return out;
}

/// Gradient buffer of the i-th parent, or nullptr when it needs none.
inline float* grad_of(Node& out, std::size_t i) {
  Node& p = *out.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

inline const float* data_of(Node& out, std::size_t i) { return out.parents[i]->data.data(); }

}  // namespace detail

}  // namespace pixelsail
