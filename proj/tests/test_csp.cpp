#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "eeglrp/csp.hpp"
#include "eeglrp/metrics.hpp"
#include "eeglrp/rng.hpp"

using namespace eeglrp;

namespace {

// windows [n, c, t] of independent noise with per-channel scale depending on
// the class: the classic two-class variance-swap construction
Tensor variance_windows(Rng& rng, const std::vector<int>& labels, int c, int t,
                        double strong, double weak, int ch_a, int ch_b) {
  Tensor w({static_cast<int>(labels.size()), c, t});
  for (size_t i = 0; i < labels.size(); ++i)
    for (int ch = 0; ch < c; ++ch) {
      double scale = 1.0;
      if (ch == ch_a) scale = labels[i] ? strong : weak;
      if (ch == ch_b) scale = labels[i] ? weak : strong;
      for (int s = 0; s < t; ++s)
        w.at(static_cast<int>(i), ch, s) = scale * rng.gaussian();
    }
  return w;
}

std::vector<int> alternating_labels(int n) {
  std::vector<int> l(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) l[static_cast<size_t>(i)] = i % 2;
  return l;
}

}  // namespace

TEST_CASE("jacobi eigensolver accuracy on symmetric matrices") {
  Rng rng(3);
  for (int n : {4, 8, 64}) {
    Tensor a({n, n});
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        const double v = rng.gaussian();
        a.at(i, j) = v;
        a.at(j, i) = v;
      }
    std::vector<double> vals;
    Tensor vecs;
    sym_eig(a, vals, vecs);
    double norm = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) norm = std::max(norm, std::abs(a[i]));
    for (int k = 0; k < n; ++k) {
      for (int i = 0; i < n; ++i) {
        double av = 0.0;
        for (int j = 0; j < n; ++j) av += a.at(i, j) * vecs.at(k, j);
        CHECK(std::abs(av - vals[static_cast<size_t>(k)] * vecs.at(k, i)) <= 1e-9 * std::max(1.0, norm));
      }
    }
    // eigenvalues descending
    for (int k = 1; k < n; ++k) CHECK(vals[static_cast<size_t>(k)] <= vals[static_cast<size_t>(k - 1)]);
  }
}

TEST_CASE("csp on the two-channel variance swap aligns with the strong channel") {
  Rng rng(11);
  auto labels = alternating_labels(60);
  Tensor w = variance_windows(rng, labels, 2, 300, 3.0, 1.0, 0, 1);
  CspModel m = fit_csp(w, labels, 2);
  // first filter extracts the channel with high class-1 variance (channel 0)
  const double n0 = std::abs(m.filters.at(0, 0));
  const double n1 = std::abs(m.filters.at(0, 1));
  const double cosine = n0 / std::sqrt(n0 * n0 + n1 * n1);
  CHECK(cosine >= 0.99);
}

TEST_CASE("csp eigenvalues lie in [0,1] and pair as lambda, 1-lambda across classes") {
  Rng rng(13);
  auto labels = alternating_labels(80);
  const int c = 6;
  Tensor w = variance_windows(rng, labels, c, 250, 2.5, 0.8, 1, 4);
  CspModel m = fit_csp(w, labels, c);
  for (double lam : m.eigenvalues) {
    CHECK(lam >= -1e-9);
    CHECK(lam <= 1.0 + 1e-9);
  }
  // per filter: the class quotients against the composite sum to exactly one
  Tensor cov[2] = {Tensor({c, c}), Tensor({c, c})};
  int counts[2] = {0, 0};
  for (int wi = 0; wi < w.dim(0); ++wi) {
    const int cls = labels[static_cast<size_t>(wi)];
    Tensor s({c, c});
    double tr = 0.0;
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) {
        double acc = 0.0;
        for (int t = 0; t < w.dim(2); ++t) acc += w.at(wi, i, t) * w.at(wi, j, t);
        s.at(i, j) = acc;
      }
    for (int i = 0; i < c; ++i) tr += s.at(i, i);
    for (int64_t i = 0; i < s.numel(); ++i) cov[cls][i] += s[i] / tr;
    ++counts[cls];
  }
  for (int cls = 0; cls < 2; ++cls)
    for (int64_t i = 0; i < cov[cls].numel(); ++i) cov[cls][i] /= counts[cls];
  auto quad = [&](const Tensor& m2, int f) {
    double acc = 0.0;
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) acc += m.filters.at(f, i) * m2.at(i, j) * m.filters.at(f, j);
    return acc;
  };
  for (int f = 0; f < m.n_components; ++f) {
    const double v1 = quad(cov[1], f), v0 = quad(cov[0], f);
    const double lam1 = v1 / (v0 + v1), lam0 = v0 / (v0 + v1);
    CHECK(lam1 == doctest::Approx(m.eigenvalues[static_cast<size_t>(f)]).epsilon(1e-6));
    CHECK(lam0 + lam1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lam1 >= 0.0);
    CHECK(lam1 <= 1.0);
  }
}

TEST_CASE("full csp basis jointly diagonalizes both class covariances") {
  Rng rng(17);
  auto labels = alternating_labels(100);
  const int c = 5;
  Tensor w = variance_windows(rng, labels, c, 400, 2.0, 0.7, 0, 3);
  CspModel m = fit_csp(w, labels, c == 5 ? 4 : c);  // even count
  // evaluate W S_c W^T for both classes
  for (int cls = 0; cls < 2; ++cls) {
    Tensor cov({c, c});
    int count = 0;
    for (int wi = 0; wi < w.dim(0); ++wi) {
      if (labels[static_cast<size_t>(wi)] != cls) continue;
      ++count;
      Tensor s({c, c});
      double tr = 0.0;
      for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
          double acc = 0.0;
          for (int t = 0; t < w.dim(2); ++t) acc += w.at(wi, i, t) * w.at(wi, j, t);
          s.at(i, j) = acc;
        }
      for (int i = 0; i < c; ++i) tr += s.at(i, i);
      for (int64_t i = 0; i < s.numel(); ++i) cov[i] += s[i] / tr;
    }
    for (int64_t i = 0; i < cov.numel(); ++i) cov[i] /= count;

    const int k = m.n_components;
    Tensor proj({k, k});
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) {
        double acc = 0.0;
        for (int i = 0; i < c; ++i)
          for (int j = 0; j < c; ++j)
            acc += m.filters.at(a, i) * cov.at(i, j) * m.filters.at(b, j);
        proj.at(a, b) = acc;
      }
    double off = 0.0, diag = 0.0;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        (a == b ? diag : off) += std::abs(proj.at(a, b));
    CHECK(off <= 1e-6 * diag);
  }
}

TEST_CASE("csp features are finite, scale-invariant, and match the closed form") {
  Rng rng(19);
  auto labels = alternating_labels(30);
  Tensor w = variance_windows(rng, labels, 3, 200, 2.0, 1.0, 0, 2);
  CspModel m = fit_csp(w, labels, 2);
  Tensor f = csp_features(m, w);
  for (int64_t i = 0; i < f.numel(); ++i) CHECK(std::isfinite(f[i]));

  Tensor w10 = w;
  for (int64_t i = 0; i < w10.numel(); ++i) w10[i] *= 10.0;
  Tensor f10 = csp_features(m, w10);
  for (int64_t i = 0; i < f.numel(); ++i) CHECK(f10[i] == doctest::Approx(f[i]).epsilon(1e-9));

  // single-filter model: the normalized log variance is identically zero
  CspModel one;
  one.n_components = 1;
  one.filters = Tensor({1, 3}, {0.3, -1.2, 0.5});
  one.eigenvalues = {0.9};
  Tensor f1 = csp_features(one, w);
  for (int64_t i = 0; i < f1.numel(); ++i) CHECK(f1[i] == doctest::Approx(0.0));

  // two-filter model against a direct computation on one window
  Tensor manual = csp_features(m, w);
  std::vector<double> var(2);
  for (int comp = 0; comp < 2; ++comp) {
    std::vector<double> z(200);
    double mean = 0.0;
    for (int t = 0; t < 200; ++t) {
      double acc = 0.0;
      for (int ch = 0; ch < 3; ++ch) acc += m.filters.at(comp, ch) * w.at(0, ch, t);
      z[static_cast<size_t>(t)] = acc;
      mean += acc;
    }
    mean /= 200;
    double v = 0.0;
    for (double s : z) v += (s - mean) * (s - mean);
    var[static_cast<size_t>(comp)] = std::max(v / 200, 1e-12);
  }
  for (int comp = 0; comp < 2; ++comp)
    CHECK(manual.at(0, comp) ==
          doctest::Approx(std::log(var[static_cast<size_t>(comp)] / (var[0] + var[1]))));
}

TEST_CASE("lda separates separable data and collapses on identical means") {
  Rng rng(23);
  // 1-D separable
  Tensor f({40, 1});
  std::vector<int> labels(40);
  for (int i = 0; i < 40; ++i) {
    labels[static_cast<size_t>(i)] = i % 2;
    f.at(i, 0) = (i % 2 ? 1.0 : -1.0) + 0.01 * rng.gaussian();
  }
  LdaModel m = fit_lda(f, labels);
  auto scores = lda_predict(m, f);
  int correct = 0;
  for (int i = 0; i < 40; ++i) correct += (scores[static_cast<size_t>(i)] > 0.0) == (labels[static_cast<size_t>(i)] == 1);
  CHECK(correct == 40);

  // identical class means: near-zero weights, chance-level separation
  Tensor g({60, 2});
  std::vector<int> gl(60);
  for (int i = 0; i < 60; ++i) {
    gl[static_cast<size_t>(i)] = i % 2;
    g.at(i, 0) = rng.gaussian();
    g.at(i, 1) = rng.gaussian();
  }
  LdaModel m2 = fit_lda(g, gl);
  const double wnorm = std::sqrt(m2.w[0] * m2.w[0] + m2.w[1] * m2.w[1]);
  CHECK(wnorm <= 0.5);

  std::vector<int> ones(10, 1);
  CHECK_THROWS_AS(fit_lda(Tensor({10, 1}), ones), InputError);
}

TEST_CASE("lda matches an exhaustive linear separator on separable points") {
  Rng rng(29);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor f({20, 2});
    std::vector<int> labels(20);
    // separable by construction along a random direction
    const double ang = rng.uniform(0.0, 3.14159);
    const double wx = std::cos(ang), wy = std::sin(ang);
    for (int i = 0; i < 20; ++i) {
      labels[static_cast<size_t>(i)] = i % 2;
      const double margin = (i % 2 ? 1.0 : -1.0) * (0.5 + rng.uniform());
      const double ox = rng.gaussian() * 0.1, oy = rng.gaussian() * 0.1;
      f.at(i, 0) = wx * margin + oy * -wy + ox * 0.0;
      f.at(i, 1) = wy * margin + oy * wx;
    }
    // brute force over a direction/offset grid finds a perfect separator
    int best_brute = 0;
    for (int a = 0; a < 180; ++a)
      for (int b = -20; b <= 20; ++b) {
        const double bx = std::cos(a * 3.14159 / 180.0), by = std::sin(a * 3.14159 / 180.0);
        int ok = 0;
        for (int i = 0; i < 20; ++i) {
          const double s = bx * f.at(i, 0) + by * f.at(i, 1) + 0.1 * b;
          ok += (s > 0.0) == (labels[static_cast<size_t>(i)] == 1);
        }
        best_brute = std::max({best_brute, ok, 20 - ok});
      }
    LdaModel m = fit_lda(f, labels);
    auto scores = lda_predict(m, f);
    int lda_ok = 0;
    for (int i = 0; i < 20; ++i)
      lda_ok += (scores[static_cast<size_t>(i)] > 0.0) == (labels[static_cast<size_t>(i)] == 1);
    CHECK(best_brute == 20);
    CHECK(lda_ok == best_brute);
  }
}

TEST_CASE("grid search picks small counts on a two-channel planted signal") {
  Rng rng(31);
  auto train_l = alternating_labels(60);
  auto val_l = alternating_labels(24);
  Tensor train_w = variance_windows(rng, train_l, 6, 250, 3.0, 1.0, 1, 4);
  Tensor val_w = variance_windows(rng, val_l, 6, 250, 3.0, 1.0, 1, 4);

  CHECK(grid_search_components(train_w, train_l, val_w, val_l, {4}) == 4);
  const int best = grid_search_components(train_w, train_l, val_w, val_l, {2, 4, 6});
  CHECK(best % 2 == 0);
  CHECK(best <= 4);
  CHECK(grid_search_components(train_w, train_l, val_w, val_l, {2, 4, 6}) == best);
  CHECK_THROWS_AS(grid_search_components(train_w, train_l, val_w, val_l, {}), InputError);
}

TEST_CASE("prediction is invariant to global scaling of the windows") {
  Rng rng(37);
  auto labels = alternating_labels(40);
  Tensor w = variance_windows(rng, labels, 4, 200, 2.5, 0.9, 0, 3);
  CspModel csp = fit_csp(w, labels, 2);
  LdaModel lda = fit_lda(csp_features(csp, w), labels);
  auto s1 = lda_predict(lda, csp_features(csp, w));
  Tensor w5 = w;
  for (int64_t i = 0; i < w5.numel(); ++i) w5[i] *= 5.0;
  auto s2 = lda_predict(lda, csp_features(csp, w5));
  for (size_t i = 0; i < s1.size(); ++i) CHECK(s2[i] == doctest::Approx(s1[i]).epsilon(1e-9));
}

TEST_CASE("fit_csp input validation") {
  Rng rng(41);
  auto labels = alternating_labels(10);
  Tensor w = variance_windows(rng, labels, 4, 100, 2.0, 1.0, 0, 1);
  CHECK_THROWS_AS(fit_csp(w, labels, 3), InputError);
  CHECK_THROWS_AS(fit_csp(w, labels, 6), InputError);
  std::vector<int> ones(10, 1);
  CHECK_THROWS_AS(fit_csp(w, ones, 2), InputError);
}
