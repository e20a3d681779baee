#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "anonact/tensor.hpp"

namespace anonact {

// Reverse-mode autodiff over Tensor. Every operation records its parents
// and a closure that scatters the node's gradient back to them; backward()
// replays closures in reverse creation order (a valid topological order).

struct VarNode {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::int64_t seq = 0;
  std::vector<std::shared_ptr<VarNode>> parents;
  std::function<void(VarNode&)> backward_fn;

  Tensor& ensure_grad();
  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->grad_ready; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad();
  void set_value(const Tensor& v);

  const std::vector<int>& shape() const { return node_->value.shape(); }
  std::shared_ptr<VarNode> node() const { return node_; }

 private:
  friend Var make_var(std::shared_ptr<VarNode> n);
  std::shared_ptr<VarNode> node_;
};

Var make_var(std::shared_ptr<VarNode> n);

bool grad_enabled();

// Scoped switch that disables graph recording (inference / frozen nets).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Generic op constructor: wraps a forward value, its parents, and the
// backward closure. Skips recording when grads are off or no parent needs them.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(VarNode&)> backward_fn);

// Runs backprop from a scalar root (seed gradient 1).
void backward(const Var& root);

// ---- primitive ops ----

Var constant(Tensor value);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise, same shape
Var div_elem(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

Var matmul(const Var& a, const Var& b);     // [M,K]x[K,N]
Var matmul_nt(const Var& a, const Var& b);  // [M,K]x[N,K]^T -> [M,N]

Var relu(const Var& a);
Var tanh_op(const Var& a);
Var abs_op(const Var& a);
Var sum_all(const Var& a);
Var mean_all(const Var& a);

Var reshape(const Var& a, std::vector<int> shape);
Var select_rows(const Var& a, const std::vector<int>& idx);
Var stack_rows(const std::vector<Var>& xs);  // k tensors of shape S -> [k, S...]

// x:[N,C,H,W], w:[Co,Ci,kh,kw], b:[Co]
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// per-sample, per-channel normalization with affine parameters
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// x:[N,K], w:[O,K], b:[O] -> [N,O]
Var linear(const Var& x, const Var& w, const Var& b);
Var upsample_nearest2(const Var& x);

Var l2norm_rows(const Var& x);                                  // [N,K] -> [N]
Var normalize_rows(const Var& x);                               // rows scaled to unit length
Var gather_labels(const Var& s, const std::vector<int>& labels);  // [N,C] -> [N]
Var replace_labels(const Var& s, const std::vector<int>& labels, const Var& vals);

// mean cross-entropy over rows of logits [N,C]
Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels);
// mean binary cross-entropy with logits, targets in {0,1}
Var bce_logits(const Var& logits, const Tensor& targets);
// sum of smooth-L1 (Huber) over all elements, transition at beta
Var smooth_l1_sum(const Var& pred, const Tensor& target, double beta = 1.0);

// plain-value helpers (no graph)
Tensor softmax_rows(const Tensor& logits);

}  // namespace anonact
