#pragma once

// Minimal reverse-mode automatic differentiation over Tensor.
//
// Backward rules are themselves written with Var ops, so `grad(...,
// create_graph=true)` yields gradients that can be differentiated again. The
// discriminator's R1 penalty relies on this. Ops flagged first-order-only
// (instance normalisation, the imaging losses) refuse to take part in a
// create_graph pass instead of silently dropping second-order terms.

#include <functional>
#include <memory>
#include <vector>

#include "fedgimp/tensor.hpp"

namespace fedgimp::ad {

class Var;
using BackwardFn = std::function<std::vector<Var>(const Var& grad_output)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  bool first_order_only = false;
  const char* op = "leaf";
  std::vector<Var> parents;
  BackwardFn backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node* node() const { return node_.get(); }

 private:
  friend Var make_op(Tensor, std::vector<Var>, BackwardFn, const char*, bool);
  std::shared_ptr<Node> node_;
};

// Records an op result. The node keeps its parents and backward rule only
// when grad mode is on and some parent requires grad.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op,
            bool first_order_only = false);

bool grad_enabled();

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// d(output)/d(inputs). `seed` defaults to ones shaped like `output`. Inputs
// the output does not depend on receive zeros.
std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, bool create_graph = false,
                      const Var& seed = Var());

// ---- elementwise / reductions -------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var mul_const(const Var& a, const Tensor& c);
Var sum(const Var& a);                               // -> [1]
Var mean(const Var& a);                              // -> [1]
Var expand_scalar(const Var& a, const Shape& shape);  // [1] -> shape
Var reshape(const Var& a, const Shape& shape);
Var leaky_relu(const Var& a, double slope);
Var softplus(const Var& a);

// ---- linear algebra ------------------------------------------------------
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

// Broadcast a per-channel vector [C] over axis 1 of `shape` ([N,C,...]).
Var channel_expand(const Var& b, const Shape& shape);
// Sum over every axis except 1: [N,C,...] -> [C].
Var channel_reduce(const Var& g);
Var add_channel_bias(const Var& x, const Var& bias);

// Broadcast a per-sample-per-channel array [N,C] over trailing spatial axes.
Var sample_channel_expand(const Var& a, const Shape& shape);
Var sample_channel_reduce(const Var& g);  // [N,C,...] -> [N,C]

// [1,...] -> [N,...] and its adjoint.
Var repeat_batch(const Var& a, int batch);
Var batch_reduce(const Var& g);

// ---- convolution / resampling (NCHW) -------------------------------------
Var conv2d(const Var& x, const Var& w);
Var conv2d_input_grad(const Var& g, const Var& w, int in_channels);
Var conv2d_weight_grad(const Var& x, const Var& g, int kernel);
Var upsample2x(const Var& x);
Var upsample2x_adjoint(const Var& g);
Var downsample2x(const Var& x);
Var downsample2x_adjoint(const Var& g);

// Central crop of the last two axes to (h, w) and the zero-pad adjoint.
Var center_crop(const Var& x, int height, int width);
Var center_pad(const Var& x, int height, int width);

// Per-(sample, channel) normalisation over the spatial axes:
// (x - mean) / sqrt(var + eps). First-order only.
Var instance_norm(const Var& x, double eps);

}  // namespace fedgimp::ad
