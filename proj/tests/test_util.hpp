#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "eeglrp/graph.hpp"
#include "eeglrp/rng.hpp"

namespace testutil {

using namespace eeglrp;

inline Tensor rand_tensor(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.gaussian();
  return t;
}

// scalar probe phi(inputs) = sum(r (*) f(inputs))
inline double probe(const std::function<Var(std::vector<Var>&)>& build,
                    const std::vector<Tensor>& inputs, const Tensor& r) {
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(leaf(t, false));
  Var out = build(leaves);
  double acc = 0.0;
  for (int64_t i = 0; i < r.numel(); ++i) acc += r[i] * out->value()[i];
  return acc;
}

// max relative error between analytic gradients and central finite
// differences over every element of every input
inline double max_fd_rel_error(const std::function<Var(std::vector<Var>&)>& build,
                               std::vector<Tensor> inputs, const Tensor& r, double h = 1e-5) {
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(leaf(t, true));
  Var out = build(leaves);
  Adjoints adj = backward(out, r, ReverseMode::Gradient);

  double worst = 0.0;
  for (size_t ii = 0; ii < inputs.size(); ++ii) {
    const Tensor* g = adj.find(leaves[ii].get());
    for (int64_t e = 0; e < inputs[ii].numel(); ++e) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[ii][e] += h;
      minus[ii][e] -= h;
      const double fd = (probe(build, plus, r) - probe(build, minus, r)) / (2.0 * h);
      const double an = g ? (*g)[e] : 0.0;
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-4});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace testutil
