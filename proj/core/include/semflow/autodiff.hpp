#ifndef SEMFLOW_AUTODIFF_HPP
#define SEMFLOW_AUTODIFF_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "semflow/tensor.hpp"

// Reverse-mode autodiff on a dynamic tape. Every op builds a Node holding
// the forward value and a closure that scatters the output gradient into
// the parents. backward() walks the graph once in reverse topological
// order, so each node's closure runs after the node's own gradient is
// complete. Gradients accumulate with +=; leaves keep theirs until
// zero_grad(). All math is double precision.

namespace semflow::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Closure invoked with the node's accumulated output gradient and its
// parent nodes. Must never capture the node's own shared_ptr (cycle).
using BackwardFn = std::function<void(const Tensor& grad_out, const std::vector<NodePtr>& parents)>;

struct Node {
  Tensor value;
  Tensor grad;  // same shape as value, zero until backward touches it
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;
};

// Value-semantics handle onto a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  // Leaf with no parents. requires_grad makes backward() accumulate into it.
  static Var leaf(Tensor value, bool requires_grad = true);
  // Non-differentiable input (masks, targets, fixed grids).
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() { node_->grad.fill(0.0); }
  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

// Builds an interior node. requires_grad is inherited from the parents;
// the backward closure is dropped when nothing upstream needs gradients.
Var make_node(Tensor value, std::vector<Var> parents, BackwardFn backward);

// Accumulates dst += src. Shapes must match.
void axpy(Tensor& dst, const Tensor& src);

// Runs reverse-mode accumulation from a scalar root. Seeds the root
// gradient with 1 and fires each reachable node's closure exactly once.
void backward(const Var& root);

// Elementwise; shapes must match exactly (no broadcasting).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double c);
Var exp(const Var& a);
Var relu(const Var& a);
// |x| composed as relu(x) + relu(-x); subgradient 0 at the kink.
Var abs(const Var& a);

// 2-D matrix product, (m,k) x (k,n) -> (m,n).
Var matmul(const Var& a, const Var& b);

// Sum of every element, scalar result.
Var sum(const Var& a);

// Treats the first lead_dims axes as row index and the rest as one vector
// per row. Zero rows normalize to zero (gradient zero there too).
Var l2_normalize_rows(const Var& a, std::size_t lead_dims);

// Row-wise softmax over the trailing axes, max-subtracted so large scale
// factors (temperature in the thousands) stay finite.
Var softmax_rows(const Var& a, std::size_t lead_dims);

// x (h,w,cin) * kernel (kh,kw,cin,cout) + bias (cout) -> (h,w,cout).
// Stride 1, zero padding, odd kernel sides so shape is preserved.
Var conv2d(const Var& x, const Var& kernel, const Var& bias);

// Forward value, but a constant for the tape: gradients stop here.
Var stop_gradient(const Var& a);

// Same data, new shape; element count must be preserved.
Var reshape(const Var& a, std::vector<std::size_t> shape);

// (h,w,c) -> (h,w) picking one trailing channel, and its inverse pairing.
Var slice_last(const Var& a, std::size_t index);
Var stack_last2(const Var& a, const Var& b);

// Forward differences along x (columns) or y (rows) of an (h,w) map; the
// trailing column / row is zero.
Var diff_x(const Var& a);
Var diff_y(const Var& a);

}  // namespace semflow::ad

#endif  // SEMFLOW_AUTODIFF_HPP
