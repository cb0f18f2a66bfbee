#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "eeglrp/experiment.hpp"
#include "eeglrp/train.hpp"
#include "test_util.hpp"

using namespace eeglrp;
using testutil::rand_tensor;

namespace {

ModelConfig toy_model(HeadKind head = HeadKind::Linear) {
  ModelConfig mc;
  mc.n_channels = 2;
  mc.n_patches = 1;
  mc.embed_dim = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.stem_channels = 4;
  mc.head_kind = head;
  return mc;
}

// separable toy task: class 1 carries a strong 10 Hz tone on channel 0
WindowedDataset toy_dataset(int n_per_split_subject = 10, int channels = 2) {
  Rng rng(5);
  const int t = 200;
  int total = 3 * n_per_split_subject;
  WindowedDataset ds;
  ds.windows = Tensor({total, channels, t});
  for (int w = 0; w < total; ++w) {
    const int label = w % 2;
    for (int c = 0; c < channels; ++c)
      for (int i = 0; i < t; ++i) {
        double v = rng.gaussian();
        if (label == 1 && c == 0) v += 6.0 * std::sin(2.0 * 3.14159265358979 * 10.0 * i / 200.0);
        ds.windows.at(w, c, i) = v;
      }
    ds.window_labels.push_back(label);
    const int subject = w / n_per_split_subject;  // 0 train, 1 val, 2 test
    ds.subject.push_back(subject);
    ds.split.push_back(subject == 0 ? Split::Train : subject == 1 ? Split::Val : Split::Test);
  }
  return ds;
}

}  // namespace

TEST_CASE("adamw single steps against the closed form") {
  Tensor p({1}, {1.0});
  std::map<std::string, Tensor*> params{{"p", &p}};
  AdamWState st;

  // zero grad, zero decay: parameter unchanged
  adamw_step(params, {{"p", Tensor({1}, {0.0})}}, st, 0.1, 0.0);
  CHECK(p[0] == 1.0);

  // one step against the hand-computed update
  AdamWState st2;
  Tensor q({1}, {0.5});
  std::map<std::string, Tensor*> params2{{"q", &q}};
  const double g = 0.3, lr = 0.01, wd = 0.02;
  adamw_step(params2, {{"q", Tensor({1}, {g})}}, st2, lr, wd);
  const double m = 0.1 * g, v = 0.001 * g * g;
  const double mh = m / 0.1, vh = v / 0.001;
  double expect = 0.5 - lr * mh / (std::sqrt(vh) + 1e-8);
  expect -= lr * wd * expect;
  CHECK(std::abs(q[0] - expect) <= 1e-12);

  // decay only: pure multiplicative shrink
  AdamWState st3;
  Tensor r({1}, {2.0});
  std::map<std::string, Tensor*> params3{{"r", &r}};
  adamw_step(params3, {{"r", Tensor({1}, {0.0})}}, st3, 0.1, 0.5);
  CHECK(r[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
}

TEST_CASE("cosine schedule endpoints, midpoint, warmup") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 100;
  cfg.warmup_epochs = 0;
  CHECK(cosine_lr(0, cfg) == doctest::Approx(1e-3));
  CHECK(cosine_lr(50, cfg) == doctest::Approx(0.5e-3).epsilon(1e-12));
  CHECK(cosine_lr(99, cfg) <= 1e-6);

  cfg.warmup_epochs = 10;
  cfg.warmup_start_lr = 1e-5;
  CHECK(cosine_lr(0, cfg) == doctest::Approx(1e-5));
  CHECK(cosine_lr(5, cfg) == doctest::Approx(1e-5 + 0.5 * (1e-3 - 1e-5)));
  CHECK(cosine_lr(10, cfg) == doctest::Approx(1e-3));
  CHECK_THROWS_AS(cosine_lr(100, cfg), InputError);
}

TEST_CASE("grace period is the ceiling of ten percent of max epochs") {
  TrainConfig cfg;
  cfg.max_epochs = 100;
  CHECK(cfg.grace() == 10);
  cfg.max_epochs = 400;
  CHECK(cfg.grace() == 40);
  cfg.max_epochs = 25;
  CHECK(cfg.grace() == 3);
}

TEST_CASE("smoothed weighted cross entropy") {
  // perfect confident prediction at zero smoothing drives the loss to zero
  CHECK(smoothed_weighted_ce({40.0}, {1}, 0.0, 1.0) <= 1e-12);
  CHECK(smoothed_weighted_ce({-40.0}, {0}, 0.0, 1.0) <= 1e-12);

  // smoothing 0.1 targets the (0.95, 0.05) pair
  const double z = 0.7;
  const double sp_pos = std::log1p(std::exp(-z));
  const double sp_neg = std::log1p(std::exp(z));
  const double manual = 0.95 * sp_pos + 0.05 * sp_neg;
  CHECK(smoothed_weighted_ce({z}, {1}, 0.1, 1.0) == doctest::Approx(manual).epsilon(1e-12));

  // the positive-class weight multiplies a positive example's loss exactly
  CHECK(smoothed_weighted_ce({z}, {1}, 0.1, 6.33) ==
        doctest::Approx(6.33 * smoothed_weighted_ce({z}, {1}, 0.1, 1.0)).epsilon(1e-12));
  CHECK(smoothed_weighted_ce({z}, {0}, 0.1, 6.33) ==
        doctest::Approx(smoothed_weighted_ce({z}, {0}, 0.1, 1.0)).epsilon(1e-12));
}

TEST_CASE("early stopper counts strict improvements") {
  EarlyStopper s(2);
  CHECK(!s.observe(3.0));  // epoch 1
  CHECK(!s.observe(2.0));  // epoch 2, improved
  CHECK(!s.observe(2.0));  // epoch 3, stale 1
  CHECK(s.observe(2.0));   // epoch 4, stale 2 -> stop
  EarlyStopper s2(3);
  CHECK(!s2.observe(1.0));
  CHECK(!s2.observe(0.9));
  CHECK(!s2.observe(0.95));
  CHECK(!s2.observe(0.91));
  CHECK(s2.observe(0.9));  // equal is not an improvement
}

TEST_CASE("metrics basics and the all-pairs oracle") {
  Metrics perfect = compute_metrics({-2, -1, 1, 2}, {0, 0, 1, 1});
  CHECK(perfect.auroc.value() == 1.0);
  CHECK(perfect.balanced_accuracy == 1.0);
  CHECK(perfect.f1 == 1.0);

  Metrics negs = compute_metrics({-1, -2, -3, -4}, {1, 0, 1, 0});
  CHECK(negs.balanced_accuracy == 0.5);
  CHECK(negs.f1 == 0.0);

  Metrics single = compute_metrics({0.5, -0.2}, {1, 1});
  CHECK(!single.auroc.has_value());
  CHECK(single.balanced_accuracy == 0.5);

  // rank implementation equals brute-force pair counting exactly
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + rng.uniform_int(99);
    std::vector<double> scores(static_cast<size_t>(n));
    std::vector<int> labels(static_cast<size_t>(n));
    bool pos = false, neg = false;
    for (int i = 0; i < n; ++i) {
      // coarse grid forces ties
      scores[static_cast<size_t>(i)] = rng.uniform_int(9) - 4.0;
      labels[static_cast<size_t>(i)] = rng.bernoulli(0.4) ? 1 : 0;
      (labels[static_cast<size_t>(i)] ? pos : neg) = true;
    }
    if (!pos || !neg) continue;
    const Metrics m = compute_metrics(scores, labels);
    double wins = 0.0;
    int64_t np = 0, nn = 0;
    for (int i = 0; i < n; ++i) {
      if (labels[static_cast<size_t>(i)] == 0) continue;
      ++np;
      for (int j = 0; j < n; ++j) {
        if (labels[static_cast<size_t>(j)] == 1) continue;
        if (scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(j)]) wins += 1.0;
        else if (scores[static_cast<size_t>(i)] == scores[static_cast<size_t>(j)]) wins += 0.5;
      }
    }
    nn = n - np;
    const double oracle = wins / (static_cast<double>(np) * static_cast<double>(nn));
    CHECK(m.auroc.value() == oracle);
  }

  // positive scaling leaves every metric unchanged exactly
  std::vector<double> s{0.3, -0.7, 1.2, -0.1, 0.0};
  std::vector<int> l{1, 0, 1, 0, 1};
  Metrics a = compute_metrics(s, l);
  std::vector<double> s2 = s;
  for (auto& v : s2) v *= 37.5;
  Metrics b = compute_metrics(s2, l);
  CHECK(a.auroc.value() == b.auroc.value());
  CHECK(a.balanced_accuracy == b.balanced_accuracy);
  CHECK(a.f1 == b.f1);
}

TEST_CASE("bootstrap standard deviation behaves like the binomial formula") {
  // degenerate all-correct predictions: zero spread
  std::vector<double> s(50, 1.0);
  std::vector<int> l(50, 1);
  for (int i = 0; i < 25; ++i) {
    s[static_cast<size_t>(i)] = -1.0;
    l[static_cast<size_t>(i)] = 0;
  }
  MetricSummary sum = bootstrap_sd(s, l, 500, 3);
  CHECK(sum.bac_sd == 0.0);
  CHECK(sum.bac_mean == 1.0);

  // i.i.d. Bernoulli correctness at p = 0.8, n = 1000
  Rng rng(11);
  const int n = 1000;
  const double p = 0.8;
  std::vector<double> scores(static_cast<size_t>(n));
  std::vector<int> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    labels[static_cast<size_t>(i)] = i % 2;
    const bool correct = rng.bernoulli(p);
    scores[static_cast<size_t>(i)] = (labels[static_cast<size_t>(i)] ? 1.0 : -1.0) * (correct ? 1.0 : -1.0);
  }
  MetricSummary boot = bootstrap_sd(scores, labels, 1000, 17);
  const double analytic = std::sqrt(p * (1.0 - p) / n);
  CHECK(std::abs(boot.bac_sd - analytic) <= 0.1 * analytic);

  // seeded reproducibility
  MetricSummary again = bootstrap_sd(scores, labels, 1000, 17);
  CHECK(again.bac_mean == boot.bac_mean);
  CHECK(again.bac_sd == boot.bac_sd);
  CHECK(boot.n_boot == 1000);
}

TEST_CASE("training a separable toy task reaches perfect train accuracy") {
  WindowedDataset ds = toy_dataset(12);
  ModelConfig mc = toy_model();
  Model model(mc);
  model.init(1);
  TrainConfig cfg;
  cfg.batch_size = 6;
  cfg.learning_rate = 2e-3;
  cfg.max_epochs = 50;
  cfg.weight_decay = 0.0;
  cfg.seed = 1;
  RunResult run = train(model, ds, cfg);
  auto [scores, labels] = score_split(model, ds, Split::Train);
  const Metrics m = compute_metrics(scores, labels);
  CHECK(m.balanced_accuracy == 1.0);
  CHECK(run.best_epoch >= 0);
  CHECK(!run.epochs.empty());
  // restoration: the model's validation accuracy equals the best recorded one
  auto [vs, vl] = score_split(model, ds, Split::Val);
  double best = 0.0;
  for (const auto& e : run.epochs) best = std::max(best, e.val_bac);
  CHECK(compute_metrics(vs, vl).balanced_accuracy == doctest::Approx(best));
}

TEST_CASE("frozen training leaves the backbone bitwise unchanged") {
  WindowedDataset ds = toy_dataset(8);
  ModelConfig mc = toy_model(HeadKind::Mlp);
  mc.head_hidden = 8;
  mc.head_layers = 1;
  Model model(mc);
  model.init(2);
  const auto before = model.snapshot();
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.configuration = RunConfiguration::Frozen;
  cfg.seed = 2;
  train(model, ds, cfg);
  bool head_changed = false;
  for (const auto& [name, t] : before) {
    const Tensor& now = model.param(name);
    if (Model::is_head_param(name)) {
      for (int64_t i = 0; i < t.numel(); ++i) head_changed |= now[i] != t[i];
    } else {
      for (int64_t i = 0; i < t.numel(); ++i) REQUIRE(now[i] == t[i]);
    }
  }
  CHECK(head_changed);
}

TEST_CASE("train validates inputs") {
  WindowedDataset ds = toy_dataset(6);
  ModelConfig mc = toy_model(HeadKind::Segmentation);
  Model model(mc);
  model.init(3);
  TrainConfig cfg;
  // classification labels with a segmentation head
  CHECK_THROWS_AS(train(model, ds, cfg), ConfigError);

  ModelConfig ok = toy_model();
  Model m2(ok);
  m2.init(3);
  WindowedDataset leaky = ds;
  leaky.subject.assign(leaky.subject.size(), 0);  // same subject in every split
  CHECK_THROWS_AS(train(m2, leaky, cfg), InputError);

  WindowedDataset noval = ds;
  for (auto& sp : noval.split)
    if (sp == Split::Val) sp = Split::Train;
  // subjects stay distinct, only the val split is empty
  CHECK_THROWS_AS(train(m2, noval, cfg), InputError);
}

TEST_CASE("masked pretraining reduces the reconstruction loss") {
  // every window carries a strong stereotyped tone, so masked patches are
  // reconstructable well beyond the noise floor
  Rng rng(6);
  WindowedDataset ds;
  ds.windows = Tensor({24, 2, 200});
  for (int w = 0; w < 24; ++w) {
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 200; ++i)
        ds.windows.at(w, c, i) = rng.gaussian() +
                                 (c == 0 ? 6.0 * std::sin(2.0 * 3.14159265358979 * 10.0 * i / 200.0)
                                         : 0.0);
    ds.window_labels.push_back(w % 2);
    ds.subject.push_back(0);
    ds.split.push_back(Split::Train);
  }
  ModelConfig mc = toy_model();
  Model model(mc);
  model.init(4);
  PretrainConfig cfg;
  cfg.max_epochs = 20;
  cfg.batch_size = 12;
  cfg.learning_rate = 5e-3;
  cfg.mask_fraction = 0.5;
  cfg.seed = 4;
  auto [ck, losses] = masked_pretrain(model, ds, cfg);
  REQUIRE(losses.size() == 20);
  CHECK(losses.back() <= 0.7 * losses.front());
  CHECK(model.has_pretrain_params());

  // deterministic: a fresh run from the same seed gives the same losses
  Model model2(mc);
  model2.init(4);
  auto [ck2, losses2] = masked_pretrain(model2, ds, cfg);
  CHECK(losses2 == losses);

  PretrainConfig bad = cfg;
  bad.mask_fraction = 0.0;
  Model m3(mc);
  m3.init(4);
  CHECK_THROWS_AS(masked_pretrain(m3, ds, bad), ConfigError);
}

TEST_CASE("subject k-fold partitions subjects exactly") {
  // 10 subjects, 2 windows each
  WindowedDataset ds = toy_dataset(10);
  ds.subject.clear();
  ds.split.clear();
  for (int w = 0; w < ds.n_windows(); ++w) {
    ds.subject.push_back(w % 10);
    ds.split.push_back(Split::Train);
  }
  ModelConfig mc = toy_model();
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.batch_size = 8;
  const auto folds = subject_kfold(mc, ds, cfg, 5, 2, 9);
  REQUIRE(folds.size() == 5);
  std::set<int> seen;
  for (const auto& f : folds) {
    CHECK(f.test_subjects.size() == 2);
    for (int s : f.test_subjects) CHECK(seen.insert(s).second);  // disjoint
  }
  CHECK(seen.size() == 10);  // union covers all subjects
  CHECK_THROWS_AS(subject_kfold(mc, ds, cfg, 11, 2, 9), InputError);
}

TEST_CASE("run_experiment shapes, sd with one seed, reproducibility") {
  WindowedDataset ds = toy_dataset(8, 4);
  ExperimentSpec spec;
  spec.task = TaskKind::ShortcutLR;
  spec.model = toy_model();
  spec.model.n_channels = 4;
  spec.dataset.montage = "mini4";
  spec.dataset.class0_channels = {"Fp1"};
  spec.dataset.class1_channels = {"Fp2"};
  spec.dataset.genuine_channels = {"O1", "O2"};
  spec.dataset.n_subjects = 3;
  spec.train.max_epochs = 3;
  spec.train.batch_size = 8;
  spec.n_seeds = 1;
  spec.configurations = {RunConfiguration::FromScratch};

  ExperimentResult r1 = run_experiment(spec, ds, nullptr, 1);
  REQUIRE(r1.configurations.size() == 1);
  CHECK(r1.configurations[0].summary.bac_sd == 0.0);
  CHECK(results_table_text(r1).find("from_scratch") != std::string::npos);

  ExperimentResult r2 = run_experiment(spec, ds, nullptr, 1);
  CHECK(results_table_csv(r1) == results_table_csv(r2));

  // parallel seed workers reproduce the sequential results bitwise
  spec.n_seeds = 2;
  ExperimentResult seq = run_experiment(spec, ds, nullptr, 1);
  ExperimentResult par = run_experiment(spec, ds, nullptr, 2);
  CHECK(results_table_csv(seq) == results_table_csv(par));

  // finetuned without a pretrained checkpoint is a hard error
  spec.configurations = {RunConfiguration::Finetuned};
  CHECK_THROWS_AS(run_experiment(spec, ds, nullptr, 1), InputError);
}
