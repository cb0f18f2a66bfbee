#include "eeglrp/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace eeglrp {

using nlohmann::json;

std::string task_name(TaskKind t) {
  switch (t) {
    case TaskKind::RPeak: return "rpeak";
    case TaskKind::ShortcutLR: return "shortcut_lr";
    case TaskKind::Affect: return "affect";
  }
  return "?";
}

TaskKind task_from_name(const std::string& name) {
  if (name == "rpeak") return TaskKind::RPeak;
  if (name == "shortcut_lr") return TaskKind::ShortcutLR;
  if (name == "affect") return TaskKind::Affect;
  throw ConfigError("unknown task " + name);
}

void ExperimentSpec::validate() const {
  if (version != 1) throw ConfigError("unsupported spec version");
  model.validate();
  train.validate();
  for (const auto& [name, cfg] : train_overrides) cfg.validate();
  rules.validate();
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (k_pos < 0 || k_neg < 0) throw ConfigError("logit quotas must be >= 0");
  if (dataset.n_subjects < 3) throw ConfigError("need at least 3 subjects for splits");
  const Montage m = montage_obj();
  auto check_channel = [&](const std::string& name) {
    if (m.index_of(name) < 0)
      throw ConfigError("channel " + name + " not in montage " + dataset.montage);
  };
  if (task == TaskKind::RPeak) check_channel(dataset.planted_channel);
  if (task == TaskKind::ShortcutLR) {
    for (const auto& c : dataset.class0_channels) check_channel(c);
    for (const auto& c : dataset.class1_channels) check_channel(c);
    for (const auto& c : dataset.genuine_channels) check_channel(c);
  }
  if (task == TaskKind::Affect)
    for (const auto& c : dataset.driver_channels) check_channel(c);
  if (model.n_channels != m.size())
    throw ConfigError("model channel count does not match montage size");
  const bool seg = task == TaskKind::RPeak;
  if (seg != (model.head_kind == HeadKind::Segmentation))
    throw ConfigError(seg ? "rpeak task needs a segmentation head"
                          : "classification task cannot use a segmentation head");
}

TrainConfig ExperimentSpec::train_for(RunConfiguration c) const {
  auto it = train_overrides.find(configuration_name(c));
  TrainConfig cfg = it != train_overrides.end() ? it->second : train;
  cfg.configuration = c;
  return cfg;
}

// ---- JSON spec ----------------------------------------------------------

namespace {

void from_json_train(const json& j, TrainConfig& t) {
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
  if (j.contains("weight_decay")) t.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("positive_class_weight"))
    t.positive_class_weight = j["positive_class_weight"].get<double>();
  if (j.contains("learning_rate")) t.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("warmup_epochs")) t.warmup_epochs = j["warmup_epochs"].get<int>();
  if (j.contains("warmup_start_lr")) t.warmup_start_lr = j["warmup_start_lr"].get<double>();
  if (j.contains("max_epochs")) t.max_epochs = j["max_epochs"].get<int>();
  if (j.contains("grace_fraction")) t.grace_fraction = j["grace_fraction"].get<double>();
  if (j.contains("label_smoothing")) t.label_smoothing = j["label_smoothing"].get<double>();
}

json to_json_train(const TrainConfig& t) {
  return json{{"batch_size", t.batch_size},
              {"weight_decay", t.weight_decay},
              {"positive_class_weight", t.positive_class_weight},
              {"learning_rate", t.learning_rate},
              {"warmup_epochs", t.warmup_epochs},
              {"warmup_start_lr", t.warmup_start_lr},
              {"max_epochs", t.max_epochs},
              {"grace_fraction", t.grace_fraction},
              {"label_smoothing", t.label_smoothing}};
}

}  // namespace

ExperimentSpec spec_from_json_text(const std::string& text) {
  json j = json::parse(text);
  ExperimentSpec s;
  s.version = j.value("version", 1);
  s.task = task_from_name(j.at("task").get<std::string>());

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    DatasetSpec& ds = s.dataset;
    if (d.contains("seed")) ds.seed = d["seed"].get<uint64_t>();
    if (d.contains("n_subjects")) ds.n_subjects = d["n_subjects"].get<int>();
    if (d.contains("duration_s")) ds.duration_s = d["duration_s"].get<double>();
    if (d.contains("sample_rate")) ds.sample_rate = d["sample_rate"].get<double>();
    if (d.contains("montage")) ds.montage = d["montage"].get<std::string>();
    if (d.contains("planted_channel")) ds.planted_channel = d["planted_channel"].get<std::string>();
    if (d.contains("mean_hr_bpm")) ds.mean_hr_bpm = d["mean_hr_bpm"].get<double>();
    if (d.contains("cfa_peak_uv")) ds.cfa_peak_uv = d["cfa_peak_uv"].get<double>();
    if (d.contains("cfa_leak")) ds.cfa_leak = d["cfa_leak"].get<double>();
    if (d.contains("n_trials")) ds.n_trials = d["n_trials"].get<int>();
    if (d.contains("shortcut_snr")) ds.shortcut_snr = d["shortcut_snr"].get<double>();
    if (d.contains("genuine_snr")) ds.genuine_snr = d["genuine_snr"].get<double>();
    if (d.contains("class0_channels"))
      ds.class0_channels = d["class0_channels"].get<std::vector<std::string>>();
    if (d.contains("class1_channels"))
      ds.class1_channels = d["class1_channels"].get<std::vector<std::string>>();
    if (d.contains("genuine_channels"))
      ds.genuine_channels = d["genuine_channels"].get<std::vector<std::string>>();
    if (d.contains("driver_channels"))
      ds.driver_channels = d["driver_channels"].get<std::vector<std::string>>();
    if (d.contains("target_name")) ds.target_name = d["target_name"].get<std::string>();
  }

  if (j.contains("preprocess")) {
    const json& p = j["preprocess"];
    if (p.contains("bandpass")) {
      if (p["bandpass"].is_null())
        s.preprocess.bandpass.reset();
      else
        s.preprocess.bandpass = {{p["bandpass"][0].get<double>(), p["bandpass"][1].get<double>()}};
    }
    if (p.contains("notch")) {
      if (p["notch"].is_null())
        s.preprocess.notch.reset();
      else
        s.preprocess.notch = p["notch"].get<double>();
    }
    if (p.contains("rereference")) s.preprocess.rereference = p["rereference"].get<bool>();
    if (p.contains("resample")) {
      if (p["resample"].is_null())
        s.preprocess.resample_to.reset();
      else
        s.preprocess.resample_to = p["resample"].get<double>();
    }
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    ModelConfig& c = s.model;
    if (m.contains("n_channels")) c.n_channels = m["n_channels"].get<int>();
    if (m.contains("sample_rate")) c.sample_rate = m["sample_rate"].get<int>();
    if (m.contains("n_patches")) c.n_patches = m["n_patches"].get<int>();
    if (m.contains("embed_dim")) c.embed_dim = m["embed_dim"].get<int>();
    if (m.contains("n_layers")) c.n_layers = m["n_layers"].get<int>();
    if (m.contains("n_heads")) c.n_heads = m["n_heads"].get<int>();
    if (m.contains("mlp_ratio")) c.mlp_ratio = m["mlp_ratio"].get<double>();
    if (m.contains("dropout_p")) c.dropout_p = m["dropout_p"].get<double>();
    if (m.contains("attn_dropout_p")) c.attn_dropout_p = m["attn_dropout_p"].get<double>();
    if (m.contains("stochastic_depth_max"))
      c.stochastic_depth_max = m["stochastic_depth_max"].get<double>();
    if (m.contains("stem_channels")) c.stem_channels = m["stem_channels"].get<int>();
    if (m.contains("head_kind")) {
      const std::string h = m["head_kind"].get<std::string>();
      c.head_kind = h == "linear" ? HeadKind::Linear
                    : h == "mlp" ? HeadKind::Mlp
                    : h == "segmentation" ? HeadKind::Segmentation
                                          : throw ConfigError("unknown head kind " + h);
    }
    if (m.contains("head_hidden")) c.head_hidden = m["head_hidden"].get<int>();
    if (m.contains("head_layers")) c.head_layers = m["head_layers"].get<int>();
  }

  if (j.contains("train")) from_json_train(j["train"], s.train);
  if (j.contains("train_overrides"))
    for (const auto& [name, tj] : j["train_overrides"].items()) {
      TrainConfig t = s.train;
      from_json_train(tj, t);
      s.train_overrides.emplace(name, t);
    }

  if (j.contains("configurations")) {
    s.configurations.clear();
    for (const auto& c : j["configurations"]) {
      const std::string n = c.get<std::string>();
      if (n == "from_scratch") s.configurations.push_back(RunConfiguration::FromScratch);
      else if (n == "finetuned") s.configurations.push_back(RunConfiguration::Finetuned);
      else if (n == "frozen") s.configurations.push_back(RunConfiguration::Frozen);
      else throw ConfigError("unknown configuration " + n);
    }
  }
  if (j.contains("n_seeds")) s.n_seeds = j["n_seeds"].get<int>();
  if (j.contains("seed_base")) s.seed_base = j["seed_base"].get<uint64_t>();

  if (j.contains("rules")) {
    const json& r = j["rules"];
    if (r.contains("epsilon")) s.rules.epsilon = r["epsilon"].get<double>();
    if (r.contains("gamma")) s.rules.gamma = r["gamma"].get<double>();
    if (r.contains("input_rule")) {
      const std::string ir = r["input_rule"].get<std::string>();
      if (ir == "wsquare") s.rules.input_rule = RuleConfig::InputRule::WSquare;
      else if (ir == "epsilon") s.rules.input_rule = RuleConfig::InputRule::Epsilon;
      else throw ConfigError("unknown input rule " + ir);
    }
    if (r.contains("bilinear_split")) s.rules.bilinear_split = r["bilinear_split"].get<double>();
    if (r.contains("softmax_rule")) {
      const std::string sr = r["softmax_rule"].get<std::string>();
      if (sr == "exact_jacobian") s.rules.softmax_rule = RuleConfig::SoftmaxRule::ExactJacobianGradInput;
      else if (sr == "value_path_identity")
        s.rules.softmax_rule = RuleConfig::SoftmaxRule::ValuePathIdentity;
      else throw ConfigError("unknown softmax rule " + sr);
    }
  }
  if (j.contains("attribution")) {
    s.k_pos = j["attribution"].value("k_pos", 2);
    s.k_neg = j["attribution"].value("k_neg", 2);
  }
  if (j.contains("pretrain")) {
    const json& p = j["pretrain"];
    if (p.contains("mask_fraction")) s.pretrain.mask_fraction = p["mask_fraction"].get<double>();
    if (p.contains("max_epochs")) s.pretrain.max_epochs = p["max_epochs"].get<int>();
    if (p.contains("batch_size")) s.pretrain.batch_size = p["batch_size"].get<int>();
    if (p.contains("learning_rate")) s.pretrain.learning_rate = p["learning_rate"].get<double>();
    if (p.contains("weight_decay")) s.pretrain.weight_decay = p["weight_decay"].get<double>();
    if (p.contains("seed")) s.pretrain.seed = p["seed"].get<uint64_t>();
  }
  if (j.contains("window_s")) s.window_s = j["window_s"].get<double>();
  if (j.contains("input_scale")) s.input_scale = j["input_scale"].get<double>();
  if (j.contains("stride_s")) s.stride_s = j["stride_s"].get<double>();
  if (j.contains("csp_candidates")) s.csp_candidates = j["csp_candidates"].get<std::vector<int>>();
  if (j.contains("n_boot")) s.n_boot = j["n_boot"].get<int>();
  if (j.contains("cv_folds")) s.cv_folds = j["cv_folds"].get<int>();
  if (j.contains("cv_val_subjects")) s.cv_val_subjects = j["cv_val_subjects"].get<int>();
  if (j.contains("out")) s.out_dir = j["out"].get<std::string>();
  s.validate();
  return s;
}

std::string spec_to_json_text(const ExperimentSpec& s) {
  json j;
  j["version"] = s.version;
  j["task"] = task_name(s.task);
  j["dataset"] = {{"seed", s.dataset.seed},
                  {"n_subjects", s.dataset.n_subjects},
                  {"duration_s", s.dataset.duration_s},
                  {"sample_rate", s.dataset.sample_rate},
                  {"montage", s.dataset.montage},
                  {"planted_channel", s.dataset.planted_channel},
                  {"mean_hr_bpm", s.dataset.mean_hr_bpm},
                  {"cfa_peak_uv", s.dataset.cfa_peak_uv},
                  {"cfa_leak", s.dataset.cfa_leak},
                  {"n_trials", s.dataset.n_trials},
                  {"shortcut_snr", s.dataset.shortcut_snr},
                  {"genuine_snr", s.dataset.genuine_snr},
                  {"class0_channels", s.dataset.class0_channels},
                  {"class1_channels", s.dataset.class1_channels},
                  {"genuine_channels", s.dataset.genuine_channels},
                  {"driver_channels", s.dataset.driver_channels},
                  {"target_name", s.dataset.target_name}};
  if (s.preprocess.bandpass)
    j["preprocess"]["bandpass"] = {s.preprocess.bandpass->first, s.preprocess.bandpass->second};
  else
    j["preprocess"]["bandpass"] = nullptr;
  if (s.preprocess.notch)
    j["preprocess"]["notch"] = *s.preprocess.notch;
  else
    j["preprocess"]["notch"] = nullptr;
  j["preprocess"]["rereference"] = s.preprocess.rereference;
  if (s.preprocess.resample_to)
    j["preprocess"]["resample"] = *s.preprocess.resample_to;
  else
    j["preprocess"]["resample"] = nullptr;
  j["model"] = {{"n_channels", s.model.n_channels},
                {"sample_rate", s.model.sample_rate},
                {"n_patches", s.model.n_patches},
                {"embed_dim", s.model.embed_dim},
                {"n_layers", s.model.n_layers},
                {"n_heads", s.model.n_heads},
                {"mlp_ratio", s.model.mlp_ratio},
                {"dropout_p", s.model.dropout_p},
                {"attn_dropout_p", s.model.attn_dropout_p},
                {"stochastic_depth_max", s.model.stochastic_depth_max},
                {"stem_channels", s.model.stem_channels},
                {"head_kind", s.model.head_kind == HeadKind::Linear ? "linear"
                              : s.model.head_kind == HeadKind::Mlp ? "mlp"
                                                                   : "segmentation"},
                {"head_hidden", s.model.head_hidden},
                {"head_layers", s.model.head_layers}};
  j["train"] = to_json_train(s.train);
  json overrides = json::object();
  for (const auto& [name, cfg] : s.train_overrides) overrides[name] = to_json_train(cfg);
  if (!overrides.empty()) j["train_overrides"] = overrides;
  json configs = json::array();
  for (RunConfiguration c : s.configurations) configs.push_back(configuration_name(c));
  j["configurations"] = configs;
  j["n_seeds"] = s.n_seeds;
  j["seed_base"] = s.seed_base;
  j["rules"] = {{"epsilon", s.rules.epsilon},
                {"gamma", s.rules.gamma},
                {"input_rule",
                 s.rules.input_rule == RuleConfig::InputRule::WSquare ? "wsquare" : "epsilon"},
                {"bilinear_split", s.rules.bilinear_split},
                {"softmax_rule", s.rules.softmax_rule == RuleConfig::SoftmaxRule::ValuePathIdentity
                                     ? "value_path_identity"
                                     : "exact_jacobian"}};
  j["attribution"] = {{"k_pos", s.k_pos}, {"k_neg", s.k_neg}};
  j["pretrain"] = {{"mask_fraction", s.pretrain.mask_fraction},
                   {"max_epochs", s.pretrain.max_epochs},
                   {"batch_size", s.pretrain.batch_size},
                   {"learning_rate", s.pretrain.learning_rate},
                   {"weight_decay", s.pretrain.weight_decay},
                   {"seed", s.pretrain.seed}};
  j["window_s"] = s.window_s;
  j["input_scale"] = s.input_scale;
  j["stride_s"] = s.stride_s;
  j["csp_candidates"] = s.csp_candidates;
  j["n_boot"] = s.n_boot;
  j["cv_folds"] = s.cv_folds;
  j["cv_val_subjects"] = s.cv_val_subjects;
  j["out"] = s.out_dir;
  return j.dump(2);
}

// ---- dataset -------------------------------------------------------------

Recording synth_subject(const ExperimentSpec& spec, int subject) {
  const uint64_t seed = spec.dataset.seed + 1000003ull * static_cast<uint64_t>(subject);
  switch (spec.task) {
    case TaskKind::RPeak: {
      CfaSpec c;
      c.seed = seed;
      c.duration_s = spec.dataset.duration_s;
      c.sample_rate = spec.dataset.sample_rate;
      c.montage = spec.montage_obj();
      c.planted_channel = spec.dataset.planted_channel;
      c.mean_hr_bpm = spec.dataset.mean_hr_bpm;
      c.peak_amplitude_uv = spec.dataset.cfa_peak_uv;
      c.leak_fraction = spec.dataset.cfa_leak;
      return synth_cfa(c);
    }
    case TaskKind::ShortcutLR: {
      ShortcutSpec c;
      c.seed = seed;
      c.sample_rate = spec.dataset.sample_rate;
      c.montage = spec.montage_obj();
      c.class0_channels = spec.dataset.class0_channels;
      c.class1_channels = spec.dataset.class1_channels;
      c.genuine_channels = spec.dataset.genuine_channels;
      c.n_trials = spec.dataset.n_trials;
      c.shortcut_snr = spec.dataset.shortcut_snr;
      c.genuine_snr = spec.dataset.genuine_snr;
      return synth_shortcut(c);
    }
    case TaskKind::Affect: {
      AffectSpec c;
      c.seed = seed;
      c.duration_s = spec.dataset.duration_s;
      c.sample_rate = spec.dataset.sample_rate;
      c.montage = spec.montage_obj();
      c.driver_channels = spec.dataset.driver_channels;
      c.target_name = spec.dataset.target_name;
      return synth_affect(c);
    }
  }
  throw ConfigError("unknown task");
}

WindowedDataset windows_for_task(const ExperimentSpec& spec, const Recording& rec, int subject,
                                 Split split) {
  WindowedDataset ds;
  switch (spec.task) {
    case TaskKind::RPeak: {
      std::vector<int64_t> peaks;
      for (const auto& e : rec.events)
        if (e.label == "rpeak") peaks.push_back(e.sample);
      const auto target = make_rpeak_target(rec, peaks);
      ds = rolling_windows(rec, spec.window_s, spec.stride_s, WindowLabeling::PerTimestep, &target);
      break;
    }
    case TaskKind::ShortcutLR:
      ds = epoch_windows(rec, spec.window_s, {"left", "right"});
      break;
    case TaskKind::Affect:
      ds = rolling_windows(rec, spec.window_s, spec.stride_s, WindowLabeling::ContinuousMedian);
      break;
  }
  for (auto& s : ds.subject) s = subject;
  for (auto& s : ds.split) s = split;
  if (spec.input_scale != 1.0)
    for (int64_t i = 0; i < ds.windows.numel(); ++i) ds.windows[i] *= spec.input_scale;
  return ds;
}

WindowedDataset build_dataset(const ExperimentSpec& spec) {
  const auto splits = split_subjects(spec.dataset.n_subjects, spec.dataset.seed);
  WindowedDataset all;
  for (int s = 0; s < spec.dataset.n_subjects; ++s) {
    Recording rec = preprocess(synth_subject(spec, s), spec.preprocess);
    all.append(windows_for_task(spec, rec, s, splits[static_cast<size_t>(s)]));
  }
  return all;
}

// ---- experiment runner ------------------------------------------------------

Model make_run_model(const ExperimentSpec& spec, RunConfiguration cfg, uint64_t seed,
                     const Checkpoint* pretrained) {
  ModelConfig mc = spec.model;
  if (cfg == RunConfiguration::Frozen && mc.head_kind == HeadKind::Linear)
    mc.head_kind = HeadKind::Mlp;  // frozen runs train an MLP head
  Model model(mc);
  model.init(seed);
  if (cfg == RunConfiguration::Finetuned || cfg == RunConfiguration::Frozen) {
    if (!pretrained)
      throw InputError(configuration_name(cfg) + " configuration needs a pretrained checkpoint");
    model.load_backbone(*pretrained);
  }
  return model;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const WindowedDataset& ds,
                                const Checkpoint* pretrained, int jobs) {
  spec.validate();
  ExperimentResult result;
  for (RunConfiguration cfg : spec.configurations) {
    ConfigurationResult cr;
    cr.configuration = cfg;
    cr.runs.resize(static_cast<size_t>(spec.n_seeds));

    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex err_mu;
    std::atomic<int> next{0};
    const int workers = std::max(1, std::min(jobs, spec.n_seeds));
    auto work = [&]() {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= spec.n_seeds) return;
        try {
          const uint64_t seed = spec.seed_base + static_cast<uint64_t>(i);
          TrainConfig tc = spec.train_for(cfg);
          tc.seed = seed;
          Model model = make_run_model(spec, cfg, seed, pretrained);
          cr.runs[static_cast<size_t>(i)] = train(model, ds, tc);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    if (workers == 1) {
      work();
    } else {
      for (int w = 0; w < workers; ++w) pool.emplace_back(work);
      for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::vector<Metrics> per_run;
    for (const auto& r : cr.runs) per_run.push_back(r.test);
    cr.summary = summarize_runs(per_run);
    result.configurations.push_back(std::move(cr));
  }
  return result;
}

std::string results_table_text(const ExperimentResult& r) {
  char buf[160];
  std::string out;
  snprintf(buf, sizeof(buf), "%-14s %-18s %-18s %-18s\n", "configuration", "auroc", "b.acc.", "f1");
  out += buf;
  for (const auto& c : r.configurations) {
    snprintf(buf, sizeof(buf), "%-14s %.3f \xc2\xb1 %.3f      %.1f%% \xc2\xb1 %.1f       %.3f \xc2\xb1 %.3f\n",
             configuration_name(c.configuration).c_str(), c.summary.auroc_mean, c.summary.auroc_sd,
             100.0 * c.summary.bac_mean, 100.0 * c.summary.bac_sd, c.summary.f1_mean,
             c.summary.f1_sd);
    out += buf;
  }
  return out;
}

std::string results_table_csv(const ExperimentResult& r) {
  std::string out = "configuration,auroc_mean,auroc_sd,bac_mean,bac_sd,f1_mean,f1_sd,n_runs\n";
  char buf[200];
  for (const auto& c : r.configurations) {
    snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d\n",
             configuration_name(c.configuration).c_str(), c.summary.auroc_mean, c.summary.auroc_sd,
             c.summary.bac_mean, c.summary.bac_sd, c.summary.f1_mean, c.summary.f1_sd,
             c.summary.n_boot);
    out += buf;
  }
  return out;
}

std::string run_log_text(const RunResult& run) {
  std::string out;
  char buf[200];
  for (const auto& e : run.epochs) {
    snprintf(buf, sizeof(buf), "epoch=%d lr=%.8f train_loss=%.6f val_loss=%.6f val_bac=%.6f\n",
             e.epoch, e.lr, e.train_loss, e.val_loss, e.val_bac);
    out += buf;
  }
  snprintf(buf, sizeof(buf), "best_epoch=%d test_auroc=%.6f test_bac=%.6f test_f1=%.6f\n",
           run.best_epoch, run.test.auroc.value_or(-1.0), run.test.balanced_accuracy, run.test.f1);
  out += buf;
  return out;
}

AttributionOutput attribute_split(const ExperimentSpec& spec, const Model& model,
                                  const WindowedDataset& ds, Split split) {
  AttributionOutput out;
  Rng rng(spec.dataset.seed ^ 0x5851F42D4C957F2Dull);
  for (int idx : ds.indices_of(split)) {
    std::vector<int> indices;
    std::vector<int> targets;
    if (ds.segmentation()) {
      const auto& t = ds.timestep_labels[static_cast<size_t>(idx)];
      indices = select_logits(t, spec.k_pos, spec.k_neg, rng);
      for (int i : indices) targets.push_back(t[static_cast<size_t>(i)]);
    } else {
      indices = {0};
      targets = {ds.window_labels[static_cast<size_t>(idx)]};
    }
    if (indices.empty()) continue;
    out.results.push_back(
        attribute(model, ds.window_at(idx), indices, spec.rules, &targets, idx));
  }
  out.pattern = aggregate(out.results, spec.montage_obj());
  out.pattern.task = task_name(spec.task);
  out.spatial = spatial_aggregate(out.pattern);
  out.temporal = temporal_aggregate(out.pattern);
  return out;
}

std::vector<int> planted_channel_indices(const ExperimentSpec& spec) {
  const Montage m = spec.montage_obj();
  std::vector<int> out;
  if (spec.task == TaskKind::RPeak) {
    out.push_back(m.index_of(spec.dataset.planted_channel));
  } else if (spec.task == TaskKind::ShortcutLR) {
    for (const auto& c : spec.dataset.class0_channels) out.push_back(m.index_of(c));
    for (const auto& c : spec.dataset.class1_channels) out.push_back(m.index_of(c));
  } else {
    for (const auto& c : spec.dataset.driver_channels) out.push_back(m.index_of(c));
  }
  return out;
}

}  // namespace eeglrp
