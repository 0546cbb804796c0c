#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A Var wraps a shared graph node. Leaf Vars created with requires_grad=true
// are parameters: their gradients accumulate across backward() calls until
// zero_grad(). Interior nodes keep their inputs alive only when a gradient
// can flow through them.

#include <functional>
#include <memory>
#include <vector>

#include "uda/core/tensor.hpp"

namespace uda {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, allocated (zeroed) on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const Shape& shape() const { return node_->value.shape(); }
  const NodePtr& node() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }
  void zero_grad();

  /// Scalar value of a one-element Var.
  float item() const;

 private:
  NodePtr node_;
};

/// Builds an interior node. backward receives the node whose grad is filled
/// and must accumulate into the grad buffers of inputs that require grad.
Var make_var(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Detached copy of the value; gradients never flow through it.
Var detach(const Var& v);

/// Back-propagates from a scalar root (seed gradient 1).
void backward(const Var& root);

/// Back-propagates from root with an explicit seed gradient of root's shape.
void backward(const Var& root, const Tensor& seed);

}  // namespace uda
