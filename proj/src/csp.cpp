#include "eeglrp/csp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eeglrp/metrics.hpp"

namespace eeglrp {

void sym_eig(const Tensor& a, std::vector<double>& vals, Tensor& vecs) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw ShapeError("sym_eig expects a square matrix");
  const int n = a.dim(0);
  Tensor m = a;
  // V accumulates rotations; columns of V are eigenvectors of a
  Tensor v({n, n});
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

  double norm = 0.0;
  for (int64_t i = 0; i < m.numel(); ++i) norm += m[i] * m[i];
  const double tol = 1e-28 * std::max(norm, 1e-300);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
    if (off < tol) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = m.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double mkp = m.at(k, p), mkq = m.at(k, q);
          m.at(k, p) = c * mkp - s * mkq;
          m.at(k, q) = s * mkp + c * mkq;
        }
        for (int k = 0; k < n; ++k) {
          const double mpk = m.at(p, k), mqk = m.at(q, k);
          m.at(p, k) = c * mpk - s * mqk;
          m.at(q, k) = s * mpk + c * mqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return m.at(i, i) > m.at(j, j); });
  vals.resize(static_cast<size_t>(n));
  vecs = Tensor({n, n});
  for (int r = 0; r < n; ++r) {
    vals[static_cast<size_t>(r)] = m.at(order[static_cast<size_t>(r)], order[static_cast<size_t>(r)]);
    for (int k = 0; k < n; ++k) vecs.at(r, k) = v.at(k, order[static_cast<size_t>(r)]);
  }
}

std::vector<double> solve_spd(const Tensor& a, const std::vector<double>& b) {
  const int n = a.dim(0);
  Tensor l({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a.at(i, j);
      for (int k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (s <= 0.0) throw InputError("matrix not positive definite");
        l.at(i, i) = std::sqrt(s);
      } else {
        l.at(i, j) = s / l.at(j, j);
      }
    }
  }
  std::vector<double> y(static_cast<size_t>(n)), x(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = b[static_cast<size_t>(i)];
    for (int k = 0; k < i; ++k) s -= l.at(i, k) * y[static_cast<size_t>(k)];
    y[static_cast<size_t>(i)] = s / l.at(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = y[static_cast<size_t>(i)];
    for (int k = i + 1; k < n; ++k) s -= l.at(k, i) * x[static_cast<size_t>(k)];
    x[static_cast<size_t>(i)] = s / l.at(i, i);
  }
  return x;
}

namespace {

// trace-normalized covariance of one window [C, T]
void add_window_cov(const Tensor& windows, int wi, Tensor& cov) {
  const int c = windows.dim(1), t = windows.dim(2);
  const double* x = windows.data() + static_cast<int64_t>(wi) * c * t;
  Tensor s({c, c});
  for (int i = 0; i < c; ++i)
    for (int j = i; j < c; ++j) {
      double acc = 0.0;
      const double* xi = x + static_cast<int64_t>(i) * t;
      const double* xj = x + static_cast<int64_t>(j) * t;
      for (int k = 0; k < t; ++k) acc += xi[k] * xj[k];
      s.at(i, j) = acc;
      s.at(j, i) = acc;
    }
  double tr = 0.0;
  for (int i = 0; i < c; ++i) tr += s.at(i, i);
  if (tr <= 0.0) tr = 1.0;
  for (int64_t i = 0; i < s.numel(); ++i) cov[i] += s[i] / tr;
}

}  // namespace

CspModel fit_csp(const Tensor& windows, const std::vector<int>& labels, int n_components) {
  if (windows.rank() != 3) throw ShapeError("fit_csp expects windows [n, channels, samples]");
  const int n = windows.dim(0), c = windows.dim(1);
  if (static_cast<int>(labels.size()) != n) throw InputError("label count mismatch");
  if (n_components < 2 || n_components % 2 != 0 || n_components > c)
    throw InputError("n_components must be even and within channel count");

  Tensor s0({c, c}), s1({c, c});
  int n0 = 0, n1 = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<size_t>(i)] != 0) {
      add_window_cov(windows, i, s1);
      ++n1;
    } else {
      add_window_cov(windows, i, s0);
      ++n0;
    }
  }
  if (n0 == 0 || n1 == 0) throw InputError("fit_csp needs both classes present");
  for (int64_t i = 0; i < s0.numel(); ++i) s0[i] /= n0;
  for (int64_t i = 0; i < s1.numel(); ++i) s1[i] /= n1;

  Tensor sc({c, c});
  for (int64_t i = 0; i < sc.numel(); ++i) sc[i] = s0[i] + s1[i];
  double tr = 0.0;
  for (int i = 0; i < c; ++i) tr += sc.at(i, i);
  for (int i = 0; i < c; ++i) sc.at(i, i) += 1e-8 * tr / c;

  // whiten the composite, then diagonalize class 1 in whitened space
  std::vector<double> evals;
  Tensor evecs;
  sym_eig(sc, evals, evecs);
  Tensor p({c, c});
  for (int r = 0; r < c; ++r) {
    const double lam = std::max(evals[static_cast<size_t>(r)], 1e-300);
    const double inv = 1.0 / std::sqrt(lam);
    for (int k = 0; k < c; ++k) p.at(r, k) = inv * evecs.at(r, k);
  }
  Tensor tmp({c, c});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int k = 0; k < c; ++k) acc += p.at(i, k) * s1.at(k, j);
      tmp.at(i, j) = acc;
    }
  Tensor sw({c, c});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int k = 0; k < c; ++k) acc += tmp.at(i, k) * p.at(j, k);
      sw.at(i, j) = acc;
    }
  for (int i = 0; i < c; ++i)
    for (int j = i + 1; j < c; ++j) {
      const double m = 0.5 * (sw.at(i, j) + sw.at(j, i));
      sw.at(i, j) = m;
      sw.at(j, i) = m;
    }
  std::vector<double> d;
  Tensor v;
  sym_eig(sw, d, v);

  // spectrum ends alternate: most class-1, most class-0, second most, ...
  std::vector<int> pick;
  for (int i = 0; i < c / 2 + 1 && static_cast<int>(pick.size()) < c; ++i) {
    pick.push_back(i);
    if (static_cast<int>(pick.size()) < c) pick.push_back(c - 1 - i);
  }
  pick.resize(static_cast<size_t>(n_components));

  CspModel model;
  model.n_components = n_components;
  model.filters = Tensor({n_components, c});
  for (int r = 0; r < n_components; ++r) {
    const int src = pick[static_cast<size_t>(r)];
    model.eigenvalues.push_back(d[static_cast<size_t>(src)]);
    for (int k = 0; k < c; ++k) {
      double acc = 0.0;
      for (int j = 0; j < c; ++j) acc += v.at(src, j) * p.at(j, k);
      model.filters.at(r, k) = acc;
    }
  }
  return model;
}

Tensor csp_features(const CspModel& model, const Tensor& windows) {
  if (model.n_components == 0) throw StateError("csp model not fitted");
  const int n = windows.dim(0), c = windows.dim(1), t = windows.dim(2);
  if (c != model.filters.dim(1)) throw ShapeError("window channel count mismatch");
  const int k = model.n_components;
  Tensor feats({n, k});
  std::vector<double> z(static_cast<size_t>(t));
  for (int wi = 0; wi < n; ++wi) {
    const double* x = windows.data() + static_cast<int64_t>(wi) * c * t;
    std::vector<double> vars(static_cast<size_t>(k));
    double total = 0.0;
    for (int f = 0; f < k; ++f) {
      for (int s = 0; s < t; ++s) {
        double acc = 0.0;
        for (int ch = 0; ch < c; ++ch)
          acc += model.filters.at(f, ch) * x[static_cast<int64_t>(ch) * t + s];
        z[static_cast<size_t>(s)] = acc;
      }
      double mean = 0.0;
      for (int s = 0; s < t; ++s) mean += z[static_cast<size_t>(s)];
      mean /= t;
      double var = 0.0;
      for (int s = 0; s < t; ++s)
        var += (z[static_cast<size_t>(s)] - mean) * (z[static_cast<size_t>(s)] - mean);
      var /= t;
      var = std::max(var, 1e-12);
      vars[static_cast<size_t>(f)] = var;
      total += var;
    }
    for (int f = 0; f < k; ++f) feats.at(wi, f) = std::log(vars[static_cast<size_t>(f)] / total);
  }
  return feats;
}

LdaModel fit_lda(const Tensor& features, const std::vector<int>& labels) {
  const int n = features.dim(0), k = features.dim(1);
  if (static_cast<int>(labels.size()) != n) throw InputError("label count mismatch");
  std::vector<double> mu0(static_cast<size_t>(k)), mu1(static_cast<size_t>(k));
  int n0 = 0, n1 = 0;
  for (int i = 0; i < n; ++i) {
    auto& mu = labels[static_cast<size_t>(i)] != 0 ? mu1 : mu0;
    (labels[static_cast<size_t>(i)] != 0 ? n1 : n0)++;
    for (int j = 0; j < k; ++j) mu[static_cast<size_t>(j)] += features.at(i, j);
  }
  if (n0 == 0 || n1 == 0) throw InputError("fit_lda needs both classes present");
  for (int j = 0; j < k; ++j) {
    mu0[static_cast<size_t>(j)] /= n0;
    mu1[static_cast<size_t>(j)] /= n1;
  }
  Tensor sw({k, k});
  for (int i = 0; i < n; ++i) {
    const auto& mu = labels[static_cast<size_t>(i)] != 0 ? mu1 : mu0;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        sw.at(a, b) += (features.at(i, a) - mu[static_cast<size_t>(a)]) *
                       (features.at(i, b) - mu[static_cast<size_t>(b)]);
  }
  const double denom = std::max(n - 2, 1);
  for (int64_t i = 0; i < sw.numel(); ++i) sw[i] /= denom;
  double tr = 0.0;
  for (int i = 0; i < k; ++i) tr += sw.at(i, i);
  for (int i = 0; i < k; ++i) sw.at(i, i) += 1e-8 * std::max(tr, 1e-12) / k;

  std::vector<double> diff(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) diff[static_cast<size_t>(j)] = mu1[static_cast<size_t>(j)] - mu0[static_cast<size_t>(j)];
  LdaModel model;
  model.w = solve_spd(sw, diff);
  double mid = 0.0;
  for (int j = 0; j < k; ++j)
    mid += model.w[static_cast<size_t>(j)] * 0.5 * (mu0[static_cast<size_t>(j)] + mu1[static_cast<size_t>(j)]);
  model.b = -mid;
  return model;
}

std::vector<double> lda_predict(const LdaModel& model, const Tensor& features) {
  const int n = features.dim(0), k = features.dim(1);
  if (static_cast<int>(model.w.size()) != k) throw ShapeError("feature dimension mismatch");
  std::vector<double> scores(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = model.b;
    for (int j = 0; j < k; ++j) s += model.w[static_cast<size_t>(j)] * features.at(i, j);
    scores[static_cast<size_t>(i)] = s;
  }
  return scores;
}

int grid_search_components(const Tensor& train_windows, const std::vector<int>& train_labels,
                           const Tensor& val_windows, const std::vector<int>& val_labels,
                           const std::vector<int>& candidates) {
  if (candidates.empty()) throw InputError("empty candidate list");
  std::vector<int> sorted = candidates;
  std::sort(sorted.begin(), sorted.end());
  int best = -1;
  double best_bac = -1.0;
  for (int cand : sorted) {
    const CspModel csp = fit_csp(train_windows, train_labels, cand);
    const LdaModel lda = fit_lda(csp_features(csp, train_windows), train_labels);
    const auto scores = lda_predict(lda, csp_features(csp, val_windows));
    const double bac = compute_metrics(scores, val_labels).balanced_accuracy;
    if (bac > best_bac) {
      best_bac = bac;
      best = cand;
    }
  }
  return best;
}

namespace {

std::pair<Tensor, std::vector<int>> gather_split(const WindowedDataset& ds, Split s) {
  const auto idx = ds.indices_of(s);
  Tensor w({static_cast<int>(idx.size()), ds.n_channels(), ds.t_in()});
  std::vector<int> labels;
  const int64_t wlen = static_cast<int64_t>(ds.n_channels()) * ds.t_in();
  for (size_t i = 0; i < idx.size(); ++i) {
    const double* src = ds.windows.data() + idx[i] * wlen;
    std::copy(src, src + wlen, w.data() + static_cast<int64_t>(i) * wlen);
    labels.push_back(ds.window_labels[static_cast<size_t>(idx[i])]);
  }
  return {std::move(w), std::move(labels)};
}

}  // namespace

CspLdaResult run_csp_lda(const WindowedDataset& ds, const std::vector<int>& candidates) {
  if (ds.segmentation()) throw InputError("CSP-LDA applies to per-window labels only");
  auto [train_w, train_l] = gather_split(ds, Split::Train);
  auto [val_w, val_l] = gather_split(ds, Split::Val);
  auto [test_w, test_l] = gather_split(ds, Split::Test);
  CspLdaResult res;
  res.n_components = grid_search_components(train_w, train_l, val_w, val_l, candidates);
  res.csp = fit_csp(train_w, train_l, res.n_components);
  res.lda = fit_lda(csp_features(res.csp, train_w), train_l);
  res.test_scores = lda_predict(res.lda, csp_features(res.csp, test_w));
  res.test_labels = test_l;
  return res;
}

}  // namespace eeglrp
