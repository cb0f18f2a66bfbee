#include "eeglrp/lrp.hpp"

#include <algorithm>
#include <cmath>

namespace eeglrp {

namespace {

void check_dense(const Tensor& x, const Tensor& w, const Tensor* bias, const Tensor& r_out) {
  if (x.rank() != 1 || w.rank() != 2 || r_out.rank() != 1)
    throw ShapeError("dense rule expects x [din], w [dout,din], r_out [dout]");
  if (w.dim(1) != x.dim(0) || w.dim(0) != r_out.dim(0))
    throw ShapeError("dense rule shape mismatch");
  if (bias && bias->numel() != w.dim(0)) throw ShapeError("dense rule bias mismatch");
}

}  // namespace

Tensor epsilon_linear_rule(const Tensor& x, const Tensor& w, const Tensor* bias,
                           const Tensor& r_out, double epsilon) {
  return gamma_conv_rule(x, w, bias, r_out, 0.0, epsilon);
}

Tensor gamma_conv_rule(const Tensor& x, const Tensor& w, const Tensor* bias,
                       const Tensor& r_out, double gamma, double epsilon) {
  check_dense(x, w, bias, r_out);
  const int dout = w.dim(0), din = w.dim(1);
  Tensor r_in({din});
  for (int j = 0; j < dout; ++j) {
    double y = bias ? (*bias)[j] + gamma * std::max((*bias)[j], 0.0) : 0.0;
    for (int i = 0; i < din; ++i) {
      const double wb = w.at(j, i) + gamma * std::max(w.at(j, i), 0.0);
      y += wb * x[i];
    }
    const double denom = y + epsilon * (y >= 0.0 ? 1.0 : -1.0);
    for (int i = 0; i < din; ++i) {
      const double wb = w.at(j, i) + gamma * std::max(w.at(j, i), 0.0);
      r_in[i] += x[i] * wb * r_out[j] / denom;
    }
  }
  return r_in;
}

Tensor wsquare_input_rule(const Tensor& w, const Tensor& r_out) {
  if (w.rank() != 2 || r_out.rank() != 1 || w.dim(0) != r_out.dim(0))
    throw ShapeError("wsquare rule expects w [dout,din], r_out [dout]");
  const int dout = w.dim(0), din = w.dim(1);
  Tensor r_in({din});
  for (int j = 0; j < dout; ++j) {
    double s = 0.0;
    for (int i = 0; i < din; ++i) s += w.at(j, i) * w.at(j, i);
    if (s == 0.0) {
      for (int i = 0; i < din; ++i) r_in[i] += r_out[j] / din;
    } else {
      for (int i = 0; i < din; ++i) r_in[i] += w.at(j, i) * w.at(j, i) / s * r_out[j];
    }
  }
  return r_in;
}

void AttributionResult::validate_shapes(int n_channels, int t_in) const {
  if (maps.size() != logits.size())
    throw StateError("attribution result holds " + std::to_string(maps.size()) + " maps for " +
                     std::to_string(logits.size()) + " logits");
  for (const Tensor& m : maps)
    if (m.rank() != 2 || m.dim(0) != n_channels || m.dim(1) != t_in)
      throw ShapeError("relevance map shape " + m.shape_str() + " does not match input window");
}

std::vector<int> select_logits(const std::vector<int>& targets, int k_pos, int k_neg, Rng& rng) {
  if (targets.empty()) throw InputError("select_logits on an empty target vector");
  std::vector<int> pos, neg;
  for (size_t i = 0; i < targets.size(); ++i)
    (targets[i] != 0 ? pos : neg).push_back(static_cast<int>(i));
  std::vector<int> out;
  auto draw = [&](std::vector<int>& cls, int k) {
    if (k >= static_cast<int>(cls.size())) {
      out.insert(out.end(), cls.begin(), cls.end());
      return;
    }
    rng.shuffle(cls);
    out.insert(out.end(), cls.begin(), cls.begin() + k);
  };
  draw(pos, k_pos);
  draw(neg, k_neg);
  std::sort(out.begin(), out.end());
  return out;
}

AttributionResult attribute(const Model& model, const Tensor& window,
                            const std::vector<int>& logit_indices, const RuleConfig& rc,
                            const std::vector<int>* logit_targets, int window_id) {
  rc.validate();
  ForwardOptions opts;
  opts.explain = true;
  Forward f = model.forward(window, opts);
  const Tensor& out = f.output->value();
  for (int idx : logit_indices)
    if (idx < 0 || idx >= out.numel())
      throw InputError("logit index " + std::to_string(idx) + " out of range for " +
                       std::to_string(out.numel()) + " logits");
  if (logit_targets && logit_targets->size() != logit_indices.size())
    throw InputError("logit_targets size must match logit_indices");

  AttributionResult res;
  res.window_id = window_id;
  for (size_t k = 0; k < logit_indices.size(); ++k) {
    const int idx = logit_indices[k];
    Tensor seed(out.shape());
    seed[idx] = 1.0;
    Adjoints adj = backward(f.output, seed, ReverseMode::Relevance, rc);
    res.maps.push_back(adj.take(f.input.get()));
    LogitRecord rec;
    rec.index = idx;
    rec.value = out[idx];
    rec.predicted = out[idx] > 0.0 ? 1 : 0;
    rec.target = logit_targets ? (*logit_targets)[k] : -1;
    res.logits.push_back(rec);
  }
  res.validate_shapes(model.config().n_channels, model.config().t_in());
  return res;
}

}  // namespace eeglrp
