#pragma once

// Minimal reverse-mode automatic differentiation over float tensors.
//
// A Var is a handle to a node in a dynamically built graph. Operations only
// record a backward closure when at least one input requires a gradient, so
// forward passes through frozen weights build no graph at all.

#include "insegan/kernels.hpp"
#include "insegan/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace insegan::ad {

struct Node {
  Tensorf value;
  Tensorf grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Tensorf& g);
  bool has_grad() const { return !grad.empty(); }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensorf value, bool requires_grad = false);

  const Tensorf& value() const { return node_->value; }
  Tensorf& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index axis) const { return node_->value.dim(axis); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->has_grad(); }
  /// Gradient, or zeros of the value's shape if none was accumulated.
  Tensorf grad() const;
  void zero_grad() { node_->grad = Tensorf(); }

  const std::shared_ptr<Node>& node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
void backward(const Var& root);

Var constant(Tensorf value);
Var detach(const Var& v);

/// Records an op node. `fn` receives the finished node and must accumulate
/// into the gradients of those inputs that require them.
Var record(Tensorf value, std::vector<Var> inputs, std::function<void(Node&)> fn);

// Element-wise and structural ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var leaky_relu(const Var& x, float slope = 0.2f);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var reshape(const Var& x, Shape shape);

// Layers.
Var linear(const Var& x, const Var& weight, const Var& bias);
Var conv(const Var& x, const Var& weight, const Var& bias, const kernels::ConvSpec& spec);
Var instance_norm(const Var& x);
Var upsample2x(const Var& x);

/// Averages consecutive groups of `group` samples along the batch axis.
Var mean_groups(const Var& x, Index group);

/// Applies tanh to columns [3, 6) of an M×6 pose matrix; rotation columns
/// pass through unchanged.
Var pose_activation(const Var& x);

/// Row gather: out[i] = x[index[i]] for a constant index vector.
Var gather_rows(const Var& x, const std::vector<Index>& index);

/// Resamples a shared C×D×H×W volume under M rigid transforms given as an
/// M×6 (axis-angle, translation) matrix. Output: M×C×D×H×W.
Var warp_volume(const Var& volume, const Var& poses);

// Scalar reductions used by the losses.
Var sum_squared_difference(const Var& a, const Var& b);
Var mean_squared_error(const Var& a, const Var& b);
Var mean_absolute_error(const Var& a, const Var& b);
/// mean(log(clamp(s, eps, 1 - eps))), or of log(1 - s) when `complement`.
Var mean_log(const Var& scores, float eps, bool complement);

float item(const Var& scalar);

}  // namespace insegan::ad
