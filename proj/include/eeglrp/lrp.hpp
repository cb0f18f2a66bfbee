#pragma once

#include <optional>
#include <string>
#include <vector>

#include "eeglrp/model.hpp"
#include "eeglrp/rng.hpp"

namespace eeglrp {

// Dense single-example forms of the relevance rules; x [din], w [dout,din],
// bias [dout] (may be null), r_out [dout]. The graph engine applies the same
// rules per recorded op.

/// R_in_i = x_i * sum_j w_ji r_j / (y_j + eps sign y_j), y = W x + b.
Tensor epsilon_linear_rule(const Tensor& x, const Tensor& w, const Tensor* bias,
                           const Tensor& r_out, double epsilon = 1e-6);

/// Epsilon rule with w -> w + gamma*max(w,0), b -> b + gamma*max(b,0) and the
/// denominator recomputed from the boosted map.
Tensor gamma_conv_rule(const Tensor& x, const Tensor& w, const Tensor* bias,
                       const Tensor& r_out, double gamma, double epsilon = 1e-6);

/// R_in_i = sum_j (w_ji^2 / sum_i' w_ji'^2) r_j; independent of x. Outputs
/// with an all-zero weight row distribute uniformly.
Tensor wsquare_input_rule(const Tensor& w, const Tensor& r_out);

/// Relevance maps for the logits of one explained window.
struct LogitRecord {
  int index = 0;          // position in the model output
  double value = 0.0;     // logit value
  int predicted = 0;      // sign(logit > 0)
  int target = -1;        // ground-truth label if known, else -1
};

struct AttributionResult {
  int window_id = 0;
  std::vector<LogitRecord> logits;
  std::vector<Tensor> maps;  // one [n_channels, t_in] map per selected logit

  void validate_shapes(int n_channels, int t_in) const;
};

/// Balanced subsampling of segmentation logits: up to k_pos indices among
/// target-1 timesteps and k_neg among target-0, uniformly without
/// replacement; a class smaller than its quota is taken whole.
std::vector<int> select_logits(const std::vector<int>& targets, int k_pos, int k_neg, Rng& rng);

/// One Relevance-mode backward per selected logit, seeded 1 at that logit;
/// relevance read at the raw input window. Model must be in eval mode.
AttributionResult attribute(const Model& model, const Tensor& window,
                            const std::vector<int>& logit_indices, const RuleConfig& rc,
                            const std::vector<int>* logit_targets = nullptr, int window_id = 0);

}  // namespace eeglrp
