#include "hifusion/autograd.hpp"

#include <unordered_set>

#include "hifusion/error.hpp"

namespace hifusion::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
  if (grad.numel() != value.numel()) grad = Tensor(value.shape(), 0.0f);
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Tensor value, std::string name) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return Var(std::move(node));
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

float Var::item() const {
  require(node_ && node_->value.numel() == 1, "item() on a non-scalar value");
  return node_->value[0];
}

Var record(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

namespace {

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; graphs from deep encoders overflow recursion.
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Var& root) {
  require(root.defined() && root.value().numel() == 1, "backward() needs a scalar root");
  if (!root.requires_grad()) return;
  Node* r = root.node().get();
  r->grad_buffer()[0] += 1.0f;
  auto order = topo_order(r);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.numel() == n->value.numel()) n->backward(*n);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::vector<NodePtr> reachable_leaves(const Var& root) {
  std::vector<NodePtr> leaves;
  if (!root.defined()) return leaves;
  std::unordered_set<Node*> seen{root.node().get()};
  std::vector<NodePtr> stack{root.node()};
  while (!stack.empty()) {
    NodePtr n = stack.back();
    stack.pop_back();
    if (n->inputs.empty() && n->requires_grad) leaves.push_back(n);
    for (const auto& in : n->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in);
    }
  }
  return leaves;
}

}  // namespace hifusion::ag
