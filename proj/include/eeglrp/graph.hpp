#pragma once

#include <memory>
#include <unordered_map>
#include <vector>

#include "eeglrp/tensor.hpp"

namespace eeglrp {

/// Direction of meaning for a single backward sweep: exact reverse-mode
/// derivatives, or rule-modified relevance propagation.
enum class ReverseMode { Gradient, Relevance };

/// Relevance rule attached to a graph node. Standard nodes fall back to the
/// plain gradient; the rest modify the backward step as documented per op.
enum class Rule {
  Standard,
  Epsilon,
  Gamma,
  WSquare,
  Identity,
  Bilinear,
  Softmax,
  DetachedNorm,
};

/// Knobs for Relevance-mode backward.
struct RuleConfig {
  enum class InputRule { WSquare, Epsilon };
  enum class SoftmaxRule { ExactJacobianGradInput, ValuePathIdentity };

  double epsilon = 1e-6;
  double gamma = 0.25;
  InputRule input_rule = InputRule::WSquare;
  double bilinear_split = 0.5;
  SoftmaxRule softmax_rule = SoftmaxRule::ExactJacobianGradInput;

  void validate() const;
};

class Node;
using Var = std::shared_ptr<Node>;

/// Adjoint accumulator for one backward sweep.
class Adjoints {
 public:
  void accumulate(const Node* n, Tensor t);
  const Tensor* find(const Node* n) const;
  Tensor take(const Node* n);

 private:
  std::unordered_map<const Node*, Tensor> map_;
};

/// One recorded operation with its forward value. Graphs are built eagerly,
/// shared via Var handles, and freed when the last handle drops.
class Node {
 public:
  Node(Tensor value, std::vector<Var> inputs, Rule rule);
  virtual ~Node() = default;

  const Tensor& value() const { return external_ ? *external_ : value_; }
  const std::vector<Var>& inputs() const { return inputs_; }
  Rule rule() const { return rule_; }
  bool requires_grad() const { return requires_grad_; }
  uint64_t id() const { return id_; }
  bool input_layer() const { return input_layer_; }
  void mark_input_layer() { input_layer_ = true; }

  /// Accumulate adjoints of this node's inputs given this node's adjoint.
  virtual void backward(const Tensor& adj, ReverseMode mode, const RuleConfig& rc,
                        Adjoints& sink) const = 0;

 protected:
  friend Var leaf(Tensor value, bool requires_grad);
  friend Var leaf_ref(const Tensor* value, bool requires_grad);

  const Tensor& in(int i) const { return inputs_[static_cast<size_t>(i)]->value(); }
  const Node* inp(int i) const { return inputs_[static_cast<size_t>(i)].get(); }

  Tensor value_;
  const Tensor* external_ = nullptr;  // leaf_ref: value owned by the caller
  std::vector<Var> inputs_;
  Rule rule_ = Rule::Standard;
  bool requires_grad_ = false;
  bool input_layer_ = false;
  uint64_t id_ = 0;
};

/// Leaf holding its own value.
Var leaf(Tensor value, bool requires_grad = false);
/// Leaf referencing caller-owned storage (must outlive the graph).
Var leaf_ref(const Tensor* value, bool requires_grad = false);
Var constant(Tensor value);

// ---- ops ----------------------------------------------------------------

/// Matrix product. 2D [m,k]x[k,n] or batched 3D [b,m,k]x[b,k,n].
Var matmul(const Var& a, const Var& b, Rule rule = Rule::Bilinear);

/// Affine map y = x W^T + b with x [n,din], W [dout,din], b [dout] (optional).
Var linear(const Var& x, const Var& w, const Var& b, Rule rule = Rule::Epsilon);

/// Valid cross-correlation. x [b,cin,t] (or [cin,t]), w [cout,cin,k], b [cout]
/// (optional), stride >= 1.
Var conv1d(const Var& x, const Var& w, const Var& b, int stride, Rule rule = Rule::Epsilon);

/// Standardize over the last axis, then scale/shift by gain/bias [d].
/// Variance floored at 1e-12 before the square root.
Var layer_norm(const Var& x, const Var& gain, const Var& bias);

/// Softmax over the last axis with detached max-subtraction.
Var softmax(const Var& x);

/// Exact erf-based GELU, applied elementwise.
Var gelu(const Var& x);

Var add(const Var& a, const Var& b);                   // same shape
Var add_rows(const Var& x, const Var& v);              // [n,d] + [d]
Var scale(const Var& x, double c);                     // x * c
Var mul_mask(const Var& x, Tensor mask);               // x (*) constant mask
Var concat_rows(const std::vector<Var>& parts);        // stack along axis 0
Var slice_rows(const Var& x, int r0, int r1);          // rows [r0, r1)
Var reshape(const Var& x, std::vector<int> shape);
Var transpose2(const Var& x);                          // 2D transpose
Var permute3(const Var& x, int p0, int p1, int p2);    // 3D axis permutation
Var mean_axis0(const Var& x);                          // mean over first axis
Var broadcast_rows(const Var& v, int n);               // [d] -> [n,d]
Var embed_rows(const Var& table, std::vector<int> indices);  // gather rows

/// Mean over elements of w[i] * smoothed-BCE(logit[i], target[i]).
/// Targets are already-smoothed probabilities in [0,1].
Var sigmoid_ce_loss(const Var& logits, Tensor targets, Tensor weights);

/// Sum of mask[i]*(pred[i]-target[i])^2 / sum(mask); 0 if the mask is empty.
Var mse_loss(const Var& pred, Tensor target, Tensor mask);

// ---- backward -----------------------------------------------------------

/// Run one reverse sweep from `output` seeded with `seed`.
///
/// Gradient mode: `seed` is the output adjoint; results are exact
/// reverse-mode derivatives. Relevance mode: `seed` plays the role of the
/// modified-gradient seed; the relevance entering the sweep is
/// value(output) (*) seed, and the adjoint reported at any node is that
/// node's relevance (input x modified-gradient, already folded).
Adjoints backward(const Var& output, const Tensor& seed, ReverseMode mode,
                  const RuleConfig& rc = RuleConfig{});

}  // namespace eeglrp
