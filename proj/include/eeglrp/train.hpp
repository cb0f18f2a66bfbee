#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "eeglrp/metrics.hpp"
#include "eeglrp/model.hpp"
#include "eeglrp/signal.hpp"

namespace eeglrp {

enum class RunConfiguration { FromScratch, Finetuned, Frozen };
std::string configuration_name(RunConfiguration c);

struct TrainConfig {
  int batch_size = 16;
  double weight_decay = 0.01;
  double positive_class_weight = 1.0;
  double learning_rate = 1e-3;
  int warmup_epochs = 0;
  double warmup_start_lr = 0.0;
  int max_epochs = 100;
  double grace_fraction = 0.10;
  double label_smoothing = 0.10;
  uint64_t seed = 0;
  RunConfiguration configuration = RunConfiguration::FromScratch;

  int grace() const {
    return static_cast<int>(std::ceil(grace_fraction * max_epochs));
  }
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_bac = 0.0;
};

struct RunResult {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;  // argmax validation balanced accuracy
  Metrics test;
  uint64_t seed = 0;
  Checkpoint checkpoint;
};

/// Per-parameter Adam moments with decoupled weight decay.
struct AdamWState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // m, v
};

/// One decoupled-weight-decay Adam step over named parameters.
void adamw_step(std::map<std::string, Tensor*>& params,
                const std::map<std::string, Tensor>& grads, AdamWState& state, double lr,
                double weight_decay);

/// Linear warmup to `learning_rate` over warmup_epochs, then half-cosine to 0.
double cosine_lr(int epoch, const TrainConfig& cfg);

/// Mean over elements of weight * CE against smoothed targets
/// (true class 1-s/2, other s/2); positive examples weighted by pos_weight.
double smoothed_weighted_ce(const std::vector<double>& logits, const std::vector<int>& labels,
                            double smoothing = 0.1, double pos_weight = 1.0);

/// Smoothed targets / weights used both by the scalar loss and the graph loss.
void smoothed_targets(const std::vector<int>& labels, double smoothing, double pos_weight,
                      Tensor& targets, Tensor& weights);

/// Validation-loss patience counter; stop after `grace` epochs without strict
/// improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int grace) : grace_(grace) {}
  /// Observe one epoch's validation loss; true means stop now.
  bool observe(double val_loss);
  int stale() const { return stale_; }

 private:
  int grace_;
  int stale_ = 0;
  double best_ = 0.0;
  bool seen_ = false;
};

/// Train on the dataset's train split, early-stop on val loss, restore the
/// best-val-BAC parameters. Frozen configuration updates only head.*.
RunResult train(Model& model, const WindowedDataset& ds, const TrainConfig& cfg,
                std::function<void(const EpochRecord&)> on_epoch = {});

/// Mean eval-mode scores and flattened labels of one split.
std::pair<std::vector<double>, std::vector<int>> score_split(const Model& model,
                                                             const WindowedDataset& ds, Split split);

struct PretrainConfig {
  double mask_fraction = 0.4;
  int max_epochs = 20;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  uint64_t seed = 0;
};

/// Masked-token reconstruction pretext; returns the pretrained checkpoint and
/// the per-epoch losses.
std::pair<Checkpoint, std::vector<double>> masked_pretrain(Model& model, const WindowedDataset& ds,
                                                           const PretrainConfig& cfg);

/// Subject-level k-fold cross-validation; each fold tests once, `val_subjects`
/// validation subjects drawn from the training folds.
struct FoldResult {
  std::vector<int> test_subjects;
  Metrics test;
};
std::vector<FoldResult> subject_kfold(const ModelConfig& mc, const WindowedDataset& ds,
                                      const TrainConfig& cfg, int k, int val_subjects,
                                      uint64_t seed);

}  // namespace eeglrp
