#include "eeglrp/train.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace eeglrp {

std::string configuration_name(RunConfiguration c) {
  switch (c) {
    case RunConfiguration::FromScratch: return "from_scratch";
    case RunConfiguration::Finetuned: return "finetuned";
    case RunConfiguration::Frozen: return "frozen";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0.0 || positive_class_weight <= 0.0)
    throw ConfigError("invalid regularization settings");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= max_epochs)
    throw ConfigError("warmup_epochs must lie in [0, max_epochs)");
  if (grace_fraction <= 0.0 || grace_fraction > 1.0)
    throw ConfigError("grace_fraction must lie in (0, 1]");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw ConfigError("label smoothing must lie in [0, 1)");
}

void adamw_step(std::map<std::string, Tensor*>& params, const std::map<std::string, Tensor>& grads,
                AdamWState& state, double lr, double weight_decay) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& [name, pt] : params) {
    auto git = grads.find(name);
    Tensor& p = *pt;
    auto mit = state.moments.try_emplace(name, Tensor(p.shape()), Tensor(p.shape())).first;
    Tensor& m = mit->second.first;
    Tensor& v = mit->second.second;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double g = git != grads.end() ? git->second[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p[i] -= lr * mh / (std::sqrt(vh) + state.eps);
      p[i] -= lr * weight_decay * p[i];
    }
  }
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.max_epochs) throw InputError("epoch out of schedule range");
  if (epoch < cfg.warmup_epochs) {
    const double f = static_cast<double>(epoch) / cfg.warmup_epochs;
    return cfg.warmup_start_lr + (cfg.learning_rate - cfg.warmup_start_lr) * f;
  }
  const int t = epoch - cfg.warmup_epochs;
  const int span = cfg.max_epochs - cfg.warmup_epochs;
  return cfg.learning_rate * 0.5 *
         (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(t) / span));
}

void smoothed_targets(const std::vector<int>& labels, double smoothing, double pos_weight,
                      Tensor& targets, Tensor& weights) {
  const int n = static_cast<int>(labels.size());
  targets = Tensor({n});
  weights = Tensor({n});
  for (int i = 0; i < n; ++i) {
    const bool pos = labels[static_cast<size_t>(i)] != 0;
    targets[i] = pos ? 1.0 - smoothing / 2.0 : smoothing / 2.0;
    weights[i] = pos ? pos_weight : 1.0;
  }
}

double smoothed_weighted_ce(const std::vector<double>& logits, const std::vector<int>& labels,
                            double smoothing, double pos_weight) {
  if (logits.empty() || logits.size() != labels.size())
    throw InputError("loss needs matching nonempty logits and labels");
  auto sp = [](double t) { return std::log1p(std::exp(-std::abs(t))) + std::max(t, 0.0); };
  double loss = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const bool pos = labels[i] != 0;
    const double q = pos ? 1.0 - smoothing / 2.0 : smoothing / 2.0;
    const double w = pos ? pos_weight : 1.0;
    loss += w * (q * sp(-logits[i]) + (1.0 - q) * sp(logits[i]));
  }
  return loss / static_cast<double>(logits.size());
}

bool EarlyStopper::observe(double val_loss) {
  if (!seen_ || val_loss < best_) {
    best_ = val_loss;
    seen_ = true;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= grace_;
}

namespace {

void check_task_head(const Model& model, const WindowedDataset& ds) {
  const bool seg_head = model.config().head_kind == HeadKind::Segmentation;
  if (ds.segmentation() != seg_head)
    throw ConfigError(seg_head ? "segmentation head configured for a classification task"
                               : "classification head configured for a segmentation task");
}

void check_disjoint_subjects(const WindowedDataset& ds) {
  std::set<int> subj[3];
  for (size_t i = 0; i < ds.split.size(); ++i)
    subj[static_cast<int>(ds.split[i])].insert(ds.subject[i]);
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      for (int s : subj[a])
        if (subj[b].count(s))
          throw InputError("subject " + std::to_string(s) + " appears in multiple splits");
}

std::map<std::string, Tensor*> trainable_params(Model& model, RunConfiguration cfg) {
  std::map<std::string, Tensor*> out;
  for (const auto& name : model.param_names()) {
    if (Model::is_pretrain_param(name)) continue;
    if (cfg == RunConfiguration::Frozen && !Model::is_head_param(name)) continue;
    out.emplace(name, &model.param(name));
  }
  return out;
}

void window_labels_of(const WindowedDataset& ds, int idx, std::vector<int>& out) {
  if (ds.segmentation())
    out = ds.timestep_labels[static_cast<size_t>(idx)];
  else
    out = {ds.window_labels[static_cast<size_t>(idx)]};
}

}  // namespace

std::pair<std::vector<double>, std::vector<int>> score_split(const Model& model,
                                                             const WindowedDataset& ds,
                                                             Split split) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (int idx : ds.indices_of(split)) {
    Forward f = model.forward(ds.window_at(idx));
    const Tensor& out = f.output->value();
    std::vector<int> l;
    window_labels_of(ds, idx, l);
    if (out.numel() != static_cast<int64_t>(l.size()))
      throw StateError("model output size does not match labels");
    for (int64_t i = 0; i < out.numel(); ++i) {
      scores.push_back(out[i]);
      labels.push_back(l[static_cast<size_t>(i)]);
    }
  }
  return {std::move(scores), std::move(labels)};
}

RunResult train(Model& model, const WindowedDataset& ds, const TrainConfig& cfg,
                std::function<void(const EpochRecord&)> on_epoch) {
  cfg.validate();
  check_task_head(model, ds);
  check_disjoint_subjects(ds);
  const auto train_idx_all = ds.indices_of(Split::Train);
  const auto val_idx = ds.indices_of(Split::Val);
  if (train_idx_all.empty() || val_idx.empty())
    throw InputError("train and val splits must be nonempty");

  auto params = trainable_params(model, cfg.configuration);
  AdamWState opt;
  Rng rng_batch(cfg.seed ^ 0xB7E151628AED2A6Bull);
  Rng rng_drop(cfg.seed ^ 0x243F6A8885A308D3ull);

  RunResult result;
  result.seed = cfg.seed;
  EarlyStopper stopper(cfg.grace());
  std::map<std::string, Tensor> best_params = model.snapshot();
  double best_bac = -1.0;
  int epochs_run = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg);
    std::vector<int> order = train_idx_all;
    rng_batch.shuffle(order);

    double train_loss = 0.0;
    int n_batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const int nb = static_cast<int>(end - start);
      std::map<std::string, Tensor> grads;
      double batch_loss = 0.0;
      for (size_t wi = start; wi < end; ++wi) {
        ForwardOptions opts;
        opts.train_mode = true;
        opts.rng = &rng_drop;
        opts.grad = cfg.configuration == RunConfiguration::Frozen ? GradScope::HeadOnly
                                                                  : GradScope::All;
        Forward f = model.forward(ds.window_at(order[wi]), opts);
        std::vector<int> labels;
        window_labels_of(ds, order[wi], labels);
        Tensor targets, weights;
        smoothed_targets(labels, cfg.label_smoothing, cfg.positive_class_weight, targets, weights);
        Var loss = sigmoid_ce_loss(f.output, std::move(targets), std::move(weights));
        batch_loss += loss->value()[0];
        Adjoints adj = backward(loss, Tensor::scalar(1.0 / nb), ReverseMode::Gradient);
        for (const auto& [name, leaf_var] : f.param_leaves) {
          if (!params.count(name)) continue;
          const Tensor* g = adj.find(leaf_var.get());
          if (!g) continue;
          auto it = grads.find(name);
          if (it == grads.end())
            grads.emplace(name, *g);
          else
            add_into(it->second, *g);
        }
      }
      adamw_step(params, grads, opt, lr, cfg.weight_decay);
      train_loss += batch_loss / nb;
      ++n_batches;
    }
    train_loss /= std::max(n_batches, 1);
    ++epochs_run;

    auto [val_scores, val_labels] = score_split(model, ds, Split::Val);
    const double val_loss = smoothed_weighted_ce(val_scores, val_labels, cfg.label_smoothing,
                                                 cfg.positive_class_weight);
    const double val_bac = compute_metrics(val_scores, val_labels).balanced_accuracy;

    EpochRecord rec{epoch, lr, train_loss, val_loss, val_bac};
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (val_bac > best_bac) {
      best_bac = val_bac;
      best_params = model.snapshot();
      result.best_epoch = epoch;
    }
    if (stopper.observe(val_loss)) break;
  }

  model.restore(best_params);
  if (!ds.indices_of(Split::Test).empty()) {
    auto [test_scores, test_labels] = score_split(model, ds, Split::Test);
    result.test = compute_metrics(test_scores, test_labels);
  }
  result.checkpoint = model.to_checkpoint(Provenance{cfg.seed, epochs_run, best_bac});
  return result;
}

std::pair<Checkpoint, std::vector<double>> masked_pretrain(Model& model, const WindowedDataset& ds,
                                                           const PretrainConfig& cfg) {
  if (!(cfg.mask_fraction > 0.0 && cfg.mask_fraction < 1.0))
    throw ConfigError("mask_fraction must lie in (0, 1)");
  model.add_pretrain_params(cfg.seed);
  const auto train_idx = ds.indices_of(Split::Train);
  if (train_idx.empty()) throw InputError("pretraining needs a nonempty train split");

  std::map<std::string, Tensor*> params;
  for (const auto& name : model.param_names())
    if (!Model::is_head_param(name)) params.emplace(name, &model.param(name));

  AdamWState opt;
  Rng rng_batch(cfg.seed ^ 0x452821E638D01377ull);
  Rng rng_drop(cfg.seed ^ 0x13198A2E03707344ull);
  const int n_tokens = model.config().n_tokens();
  const int n_mask = static_cast<int>(std::llround(cfg.mask_fraction * n_tokens));

  std::vector<double> losses;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<int> order = train_idx;
    rng_batch.shuffle(order);
    double epoch_loss = 0.0;
    int n_batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const int nb = static_cast<int>(end - start);
      std::map<std::string, Tensor> grads;
      double batch_loss = 0.0;
      for (size_t wi = start; wi < end; ++wi) {
        ForwardOptions opts;
        opts.train_mode = true;
        opts.rng = &rng_drop;
        opts.grad = GradScope::All;
        const auto masked = rng_batch.sample_without_replacement(n_tokens, n_mask);
        MaskedForward mf = model.forward_masked(ds.window_at(order[wi]), masked, opts);
        batch_loss += mf.loss->value()[0];
        Adjoints adj = backward(mf.loss, Tensor::scalar(1.0 / nb), ReverseMode::Gradient);
        for (const auto& [name, leaf_var] : mf.param_leaves) {
          if (!params.count(name)) continue;
          const Tensor* g = adj.find(leaf_var.get());
          if (!g) continue;
          auto it = grads.find(name);
          if (it == grads.end())
            grads.emplace(name, *g);
          else
            add_into(it->second, *g);
        }
      }
      adamw_step(params, grads, opt, cfg.learning_rate, cfg.weight_decay);
      epoch_loss += batch_loss / nb;
      ++n_batches;
    }
    losses.push_back(epoch_loss / std::max(n_batches, 1));
  }
  return {model.to_checkpoint(Provenance{cfg.seed, cfg.max_epochs, 0.0}), losses};
}

std::vector<FoldResult> subject_kfold(const ModelConfig& mc, const WindowedDataset& ds,
                                      const TrainConfig& cfg, int k, int val_subjects,
                                      uint64_t seed) {
  std::set<int> subj_set(ds.subject.begin(), ds.subject.end());
  std::vector<int> subjects(subj_set.begin(), subj_set.end());
  if (static_cast<int>(subjects.size()) < k)
    throw InputError("fewer subjects than folds");
  Rng rng(seed);
  rng.shuffle(subjects);
  std::vector<std::vector<int>> folds(static_cast<size_t>(k));
  for (size_t i = 0; i < subjects.size(); ++i)
    folds[i % static_cast<size_t>(k)].push_back(subjects[i]);

  std::vector<FoldResult> results;
  for (int fi = 0; fi < k; ++fi) {
    std::set<int> test_set(folds[static_cast<size_t>(fi)].begin(),
                           folds[static_cast<size_t>(fi)].end());
    std::vector<int> pool;
    for (int s : subjects)
      if (!test_set.count(s)) pool.push_back(s);
    if (val_subjects >= static_cast<int>(pool.size()))
      throw InputError("not enough training subjects to draw validation from");
    Rng fold_rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<uint64_t>(fi + 1)));
    fold_rng.shuffle(pool);
    std::set<int> val_set(pool.begin(), pool.begin() + val_subjects);

    WindowedDataset fold = ds;
    for (size_t wi = 0; wi < fold.split.size(); ++wi) {
      const int s = fold.subject[wi];
      fold.split[wi] = test_set.count(s) ? Split::Test
                       : val_set.count(s) ? Split::Val
                                          : Split::Train;
    }
    Model model(mc);
    model.init(cfg.seed ^ (0xA5A5A5A5ull + static_cast<uint64_t>(fi)));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + static_cast<uint64_t>(fi);
    RunResult run = train(model, fold, fold_cfg);
    FoldResult fr;
    fr.test_subjects = folds[static_cast<size_t>(fi)];
    fr.test = run.test;
    results.push_back(std::move(fr));
  }
  return results;
}

}  // namespace eeglrp
