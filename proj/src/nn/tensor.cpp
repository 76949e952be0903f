#include "sfda/nn/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <unordered_set>

#include "sfda/error.hpp"

namespace sfda::nn {

namespace {

thread_local bool t_grad_enabled = true;

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Parameter::Parameter(std::string name_, Shape shape_)
    : name(std::move(name_)), shape(std::move(shape_)), value(shape_size(shape), 0.0) {
  adam_m.assign(value.size(), 0.0);
  adam_v.assign(value.size(), 0.0);
}

void Parameter::zero_grad() {
  grad.clear();
  has_grad = false;
}

void Parameter::accumulate_grad(std::span<const double> g) {
  if (!has_grad) {
    grad.assign(value.size(), 0.0);
    has_grad = true;
  }
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::span<const double> Tensor::values() const { return node_->value; }
bool Tensor::requires_grad() const { return node_->requires_grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }
const std::string& Tensor::op() const { return node_->op; }

double Tensor::item() const {
  if (size() != 1) throw InvalidArgument("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

namespace {

Tensor make_leaf(std::string op, Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_size(shape))
    throw InvalidArgument(op + ": value count does not match shape " + shape_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad && t_grad_enabled;
  return Tensor(std::move(node));
}

}  // namespace

Tensor constant(Shape shape, std::vector<double> values) {
  return make_leaf("constant", std::move(shape), std::move(values), false);
}

Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  return make_leaf("leaf", std::move(shape), std::move(values), requires_grad);
}

Tensor parameter(Parameter& p) {
  Tensor t = make_leaf("parameter:" + p.name, p.shape, p.value, true);
  if (t.requires_grad()) t.node()->sink = &p;
  return t;
}

Tensor frozen(const Parameter& p) { return make_leaf("frozen:" + p.name, p.shape, p.value, false); }

Tensor make_result(std::string op, Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn) {
  if (values.size() != shape_size(shape))
    throw InvalidArgument(op + ": result size does not match shape " + shape_string(shape));
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by op '" + op + "'");
  }
  auto node = std::make_shared<detail::Node>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->value = std::move(values);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs && t_grad_enabled) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& root) {
  if (!root.defined()) throw InvalidArgument("backward on undefined tensor");
  auto& root_node = *root.node();
  if (root_node.consumed) throw InvalidState("backward called twice on the same graph; run forward again");
  if (root.size() != 1) throw InvalidArgument("backward requires a scalar root, got " + shape_string(root.shape()));

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(&root_node, 0);
  visited.insert(&root_node);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root_node.ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
    if (node->sink && !node->grad.empty()) node->sink->accumulate_grad(node->grad);
  }
  for (detail::Node* node : order) {
    node->consumed = true;
    node->parents.clear();
    node->backward = nullptr;
    node->sink = nullptr;
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

}  // namespace sfda::nn
