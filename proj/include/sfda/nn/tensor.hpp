#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sfda::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Trainable tensor with value semantics: copying a Parameter copies its
// values, gradient and optimizer moments. Values are kept representable in
// single precision so checkpoints round-trip bit-exactly.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool has_grad = false;
  std::vector<double> adam_m;  // first moment
  std::vector<double> adam_v;  // second moment

  Parameter() = default;
  Parameter(std::string name, Shape shape);

  std::size_t size() const { return value.size(); }
  void zero_grad();
  void accumulate_grad(std::span<const double> g);
};

namespace detail {

struct Node {
  std::string op;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;
  Parameter* sink = nullptr;  // leaf bound to a Parameter

  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Handle to a node of the recorded computation. Cheap to copy; copies share
// the node.
class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> values() const;
  double item() const;
  bool requires_grad() const;
  // Gradient accumulated by backward() for tensors created with leaf(...,
  // true); empty if none reached this node.
  std::span<const double> grad() const;
  const std::string& op() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Non-differentiable input.
Tensor constant(Shape shape, std::vector<double> values);
// Differentiable leaf not tied to a Parameter (tests read grad()).
Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = true);
// Leaf whose gradient is accumulated into p.grad by backward().
Tensor parameter(Parameter& p);
// Frozen view of a parameter (no gradient).
Tensor frozen(const Parameter& p);

// Reverse sweep from a scalar root. Gradients are accumulated (not
// overwritten) into reachable Parameters; afterwards the tape is released.
// Throws InvalidState when the root was already back-propagated.
void backward(const Tensor& root);

// Records op results. Validates finiteness (NumericError naming the op) and
// drops the backward closure when no parent needs gradients or recording is
// disabled.
Tensor make_result(std::string op, Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward);

// Scoped switch that disables tape recording on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace sfda::nn
