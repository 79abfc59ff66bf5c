#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "teaf/attention.hpp"
#include "teaf/ops.hpp"
#include "teaf/tensor.hpp"

namespace teaf::ag {

/* Tape node. Forward values are computed eagerly when an op builds the node;
 * `backward` scatters this node's gradient into its parents. */
struct Node {
  Tensor val;
  Tensor grad;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;

  static Var leaf(Tensor v) {
    Var x;
    x.n_ = std::make_shared<Node>();
    x.n_->val = std::move(v);
    return x;
  }

  bool valid() const { return static_cast<bool>(n_); }
  const Tensor& value() const { return n_->val; }
  Tensor& mutable_value() { return n_->val; }

  /* Gradient accumulated by the last backward() whose graph contained this
   * node; zeros if the node was unreachable. */
  Tensor grad_or_zero() const {
    if (n_->has_grad) return n_->grad;
    return Tensor::zeros(n_->val.shape());
  }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var relu(const Var& a);
Var reshape(const Var& a, std::vector<int> shape);

/* y = x * alpha with alpha a 1-element tensor. */
Var scale_by(const Var& x, const Var& alpha);

Var matmul(const Var& x, const Var& w);
Var softmax_rows(const Var& x);
Var conv2d_depthwise(const Var& x, const Var& kernel, PadMode pad);
Var avg_pool_adaptive(const Var& x, int oh, int ow);
Var max_pool_adaptive(const Var& x, int oh, int ow);

/* coords are data, not a differentiable input: the rounded lookup has zero
 * derivative with respect to them, so gradient flows only into x. */
Var gather_hw(const Var& x, const Tensor& coords);

Var pixel_shuffle(const Var& x, int r);

Var windowed_attention(const Var& q, const Var& k, const Var& v,
                       std::shared_ptr<const WindowTable> table);
Var global_attention(const Var& q, const Var& ktok, const Var& vtok, bool dsa_phase);

Var sum(const Var& x);
/* scalar readout sum_i x_i * w_i with fixed weights */
Var dot_const(const Var& x, Tensor w);
/* mean absolute deviation against a fixed target */
Var l1_loss(const Var& pred, Tensor target);

/* Reverse pass from a scalar root. Gradients of every node in the reachable
 * graph are reset, then accumulated in a deterministic topological order. */
void backward(const Var& root);

/* Max norm-wise deviation between reverse-mode and central-difference
 * gradients of a scalar-valued function:
 *   max_i |g_i - fd_i| / max(||g||_inf, ||fd||_inf, 1e-30)
 * with fd_i = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). */
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x0, double eps);

}  // namespace teaf::ag
