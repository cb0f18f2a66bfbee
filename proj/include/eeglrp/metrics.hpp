#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace eeglrp {

struct Metrics {
  std::optional<double> auroc;  // empty when only one class is present
  double balanced_accuracy = 0.0;
  double f1 = 0.0;
};

/// AUROC via the rank statistic with tie correction; balanced accuracy and
/// positive-class F1 at threshold 0.
Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels);

struct MetricSummary {
  double auroc_mean = 0.0, auroc_sd = 0.0;
  double bac_mean = 0.0, bac_sd = 0.0;
  double f1_mean = 0.0, f1_sd = 0.0;
  int n_boot = 0;
};

/// Resample (scores, labels) with replacement n_boot times; mean and sample
/// standard deviation per metric. Resamples with a single class are skipped
/// for AUROC.
MetricSummary bootstrap_sd(const std::vector<double>& scores, const std::vector<int>& labels,
                           int n_boot = 1000, uint64_t seed = 0);

/// Mean and sample sd over a set of per-run metrics.
MetricSummary summarize_runs(const std::vector<Metrics>& runs);

}  // namespace eeglrp
