#include "eeglrp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eeglrp/rng.hpp"
#include "eeglrp/tensor.hpp"

namespace eeglrp {

Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw InputError("metrics need matching nonempty scores and labels");
  const size_t n = scores.size();

  int64_t n_pos = 0;
  for (int l : labels) n_pos += (l != 0);
  const int64_t n_neg = static_cast<int64_t>(n) - n_pos;

  Metrics m;

  // AUROC from average ranks (ties share ranks)
  if (n_pos > 0 && n_neg > 0) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
      const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
      for (size_t k = i; k <= j; ++k)
        if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
      i = j + 1;
    }
    m.auroc = (rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
              (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  }

  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (size_t k = 0; k < n; ++k) {
    const bool pred = scores[k] > 0.0;
    if (labels[k] != 0)
      pred ? ++tp : ++fn;
    else
      pred ? ++fp : ++tn;
  }
  const double rec_pos = n_pos > 0 ? static_cast<double>(tp) / static_cast<double>(n_pos) : 0.0;
  const double rec_neg = n_neg > 0 ? static_cast<double>(tn) / static_cast<double>(n_neg) : 0.0;
  if (n_pos > 0 && n_neg > 0)
    m.balanced_accuracy = 0.5 * (rec_pos + rec_neg);
  else
    m.balanced_accuracy = n_pos > 0 ? rec_pos : rec_neg;
  m.f1 = (2 * tp + fp + fn) > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn)
                                : 0.0;
  return m;
}

namespace {

struct Acc {
  double sum = 0.0, sq = 0.0;
  int n = 0;
  void add(double v) {
    sum += v;
    sq += v * v;
    ++n;
  }
  double mean() const { return n > 0 ? sum / n : 0.0; }
  double sd() const {
    if (n < 2) return 0.0;
    const double var = (sq - sum * sum / n) / (n - 1);
    return var > 0.0 ? std::sqrt(var) : 0.0;
  }
};

}  // namespace

MetricSummary bootstrap_sd(const std::vector<double>& scores, const std::vector<int>& labels,
                           int n_boot, uint64_t seed) {
  if (scores.empty() || scores.size() != labels.size())
    throw InputError("bootstrap needs matching nonempty scores and labels");
  Rng rng(seed);
  const int n = static_cast<int>(scores.size());
  Acc auroc, bac, f1;
  std::vector<double> s(static_cast<size_t>(n));
  std::vector<int> l(static_cast<size_t>(n));
  for (int b = 0; b < n_boot; ++b) {
    for (int i = 0; i < n; ++i) {
      const int j = rng.uniform_int(n);
      s[static_cast<size_t>(i)] = scores[static_cast<size_t>(j)];
      l[static_cast<size_t>(i)] = labels[static_cast<size_t>(j)];
    }
    const Metrics m = compute_metrics(s, l);
    if (m.auroc) auroc.add(*m.auroc);
    bac.add(m.balanced_accuracy);
    f1.add(m.f1);
  }
  MetricSummary out;
  out.auroc_mean = auroc.mean();
  out.auroc_sd = auroc.sd();
  out.bac_mean = bac.mean();
  out.bac_sd = bac.sd();
  out.f1_mean = f1.mean();
  out.f1_sd = f1.sd();
  out.n_boot = n_boot;
  return out;
}

MetricSummary summarize_runs(const std::vector<Metrics>& runs) {
  Acc auroc, bac, f1;
  for (const auto& m : runs) {
    if (m.auroc) auroc.add(*m.auroc);
    bac.add(m.balanced_accuracy);
    f1.add(m.f1);
  }
  MetricSummary out;
  out.auroc_mean = auroc.mean();
  out.auroc_sd = auroc.sd();
  out.bac_mean = bac.mean();
  out.bac_sd = bac.sd();
  out.f1_mean = f1.mean();
  out.f1_sd = f1.sd();
  out.n_boot = static_cast<int>(runs.size());
  return out;
}

}  // namespace eeglrp
