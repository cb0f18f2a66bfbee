#pragma once

#include <vector>

#include "eeglrp/signal.hpp"
#include "eeglrp/tensor.hpp"

namespace eeglrp {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvalues
/// descending, eigenvectors as rows of `vecs`.
void sym_eig(const Tensor& a, std::vector<double>& vals, Tensor& vecs);

/// Solve A x = b for symmetric positive definite A (Cholesky).
std::vector<double> solve_spd(const Tensor& a, const std::vector<double>& b);

struct CspModel {
  Tensor filters;                   // [n_components, n_channels]
  std::vector<double> eigenvalues;  // paired spectrum, picked order
  int n_components = 0;
};

/// Fit spatial filters from class-conditional covariances (trace-normalized
/// per window), whitening + symmetric eigensolve; filters taken alternately
/// from both spectrum ends.
CspModel fit_csp(const Tensor& windows, const std::vector<int>& labels, int n_components);

/// Normalized log-variance features of the filtered windows.
Tensor csp_features(const CspModel& model, const Tensor& windows);

struct LdaModel {
  std::vector<double> w;
  double b = 0.0;
};

/// Fisher discriminant: w ~ Sw^-1 (mu1 - mu0), bias at the projected midpoint.
LdaModel fit_lda(const Tensor& features, const std::vector<int>& labels);
std::vector<double> lda_predict(const LdaModel& model, const Tensor& features);

/// Fit per candidate on train, pick max validation balanced accuracy,
/// ties to the smaller count.
int grid_search_components(const Tensor& train_windows, const std::vector<int>& train_labels,
                           const Tensor& val_windows, const std::vector<int>& val_labels,
                           const std::vector<int>& candidates);

struct CspLdaResult {
  int n_components = 0;
  CspModel csp;
  LdaModel lda;
  std::vector<double> test_scores;
  std::vector<int> test_labels;
};

/// Full baseline: grid search on train/val, refit, score the test split.
CspLdaResult run_csp_lda(const WindowedDataset& ds, const std::vector<int>& candidates);

}  // namespace eeglrp
