#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hifusion/tensor.hpp"

namespace hifusion::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the computation tape. Backward reads `grad` and accumulates
// into the inputs' grads; it must not capture the node itself.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::string name;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  // Allocates a zero grad on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  // Leaf holding a constant (no grad) or a trainable value.
  static Var constant(Tensor value);
  static Var parameter(Tensor value, std::string name);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  const std::string& name() const { return node_->name; }
  const NodePtr& node() const { return node_; }

  void zero_grad();
  float item() const;

 private:
  NodePtr node_;
};

// Records an op result. When grad mode is off or no input needs a grad the
// backward function is dropped and the result is a plain constant.
Var record(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Reverse-mode sweep from a scalar root (seed gradient 1).
void backward(const Var& root);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Every trainable leaf reachable from `root`, in discovery order.
std::vector<NodePtr> reachable_leaves(const Var& root);

}  // namespace hifusion::ag
