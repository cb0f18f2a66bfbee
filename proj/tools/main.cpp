#include <cstdio>
#include <filesystem>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "eeglrp/experiment.hpp"
#include "eeglrp/io.hpp"

namespace fs = std::filesystem;
using namespace eeglrp;
using nlohmann::json;

namespace {

struct CliArgs {
  std::string spec_path;
  std::string out_override;
  std::string checkpoint;
  std::string configuration = "from_scratch";
  int jobs = 1;
  int64_t seed_override = -1;
};

std::string out_root() {
  const char* env = std::getenv("EEGLRP_OUT");
  return env ? env : "";
}

fs::path resolve_out(const ExperimentSpec& spec, const CliArgs& args) {
  fs::path dir = args.out_override.empty() ? fs::path(spec.out_dir) : fs::path(args.out_override);
  const std::string root = out_root();
  if (dir.is_relative() && !root.empty()) dir = fs::path(root) / dir;
  return dir;
}

ExperimentSpec load_spec(const CliArgs& args) {
  if (!fs::exists(args.spec_path)) throw IoError("spec file not found: " + args.spec_path);
  ExperimentSpec spec = spec_from_json_text(read_text_file(args.spec_path));
  if (args.seed_override >= 0) {
    spec.dataset.seed = static_cast<uint64_t>(args.seed_override);
    spec.seed_base = static_cast<uint64_t>(args.seed_override);
  }
  return spec;
}

std::string subject_file(int subject, bool preprocessed) {
  return (preprocessed ? "pp/subject_" : "raw/subject_") + std::to_string(subject) + ".rec";
}

json load_manifest(const fs::path& out) {
  const fs::path p = out / "manifest.json";
  if (!fs::exists(p)) throw IoError("manifest not found: " + p.string() + " (run synth first)");
  return json::parse(read_text_file(p.string()));
}

// Load preprocessed recordings listed in the manifest and window them.
WindowedDataset dataset_from_disk(const ExperimentSpec& spec, const fs::path& out) {
  const json manifest = load_manifest(out);
  if (!manifest.value("preprocessed", false))
    throw IoError("dataset not preprocessed yet (run preprocess)");
  WindowedDataset all;
  for (const auto& sj : manifest.at("subjects")) {
    const int id = sj.at("id").get<int>();
    const std::string split = sj.at("split").get<std::string>();
    const fs::path file = out / subject_file(id, true);
    if (!fs::exists(file)) throw IoError("missing recording " + file.string());
    Recording rec = load_recording(file.string());
    const Split sp = split == "train" ? Split::Train : split == "val" ? Split::Val : Split::Test;
    all.append(windows_for_task(spec, rec, id, sp));
  }
  return all;
}

int cmd_synth(const CliArgs& args) {
  const ExperimentSpec spec = load_spec(args);
  const fs::path out = resolve_out(spec, args);
  const auto splits = split_subjects(spec.dataset.n_subjects, spec.dataset.seed);
  fs::create_directories(out / "raw");
  json manifest;
  manifest["version"] = 1;
  manifest["task"] = task_name(spec.task);
  manifest["montage"] = spec.dataset.montage;
  manifest["sample_rate"] = spec.dataset.sample_rate;
  manifest["preprocessed"] = false;
  json subjects = json::array();
  for (int s = 0; s < spec.dataset.n_subjects; ++s) {
    Recording rec = synth_subject(spec, s);
    save_recording(rec, (out / subject_file(s, false)).string());
    subjects.push_back({{"id", s},
                        {"split", split_name(splits[static_cast<size_t>(s)])},
                        {"file", subject_file(s, false)}});
  }
  manifest["subjects"] = subjects;
  write_text_file((out / "manifest.json").string(), manifest.dump(2) + "\n");
  printf("synth: wrote %d recordings to %s\n", spec.dataset.n_subjects, out.string().c_str());
  return 0;
}

int cmd_preprocess(const CliArgs& args) {
  const ExperimentSpec spec = load_spec(args);
  const fs::path out = resolve_out(spec, args);
  json manifest = load_manifest(out);
  fs::create_directories(out / "pp");
  for (const auto& sj : manifest.at("subjects")) {
    const int id = sj.at("id").get<int>();
    const fs::path src = out / subject_file(id, false);
    if (!fs::exists(src)) throw IoError("missing raw recording " + src.string());
    Recording rec = preprocess(load_recording(src.string()), spec.preprocess);
    save_recording(rec, (out / subject_file(id, true)).string());
  }
  manifest["preprocessed"] = true;
  write_text_file((out / "manifest.json").string(), manifest.dump(2) + "\n");
  printf("preprocess: %zu recordings -> %s\n", manifest.at("subjects").size(),
         (out / "pp").string().c_str());
  return 0;
}

int cmd_pretrain(const CliArgs& args) {
  const ExperimentSpec spec = load_spec(args);
  const fs::path out = resolve_out(spec, args);
  WindowedDataset ds = dataset_from_disk(spec, out);
  Model model(spec.model);
  model.init(spec.pretrain.seed);
  auto [ck, losses] = masked_pretrain(model, ds, spec.pretrain);
  save_checkpoint(ck, (out / "pretrained.ckpt").string());
  std::string log;
  char buf[96];
  for (size_t i = 0; i < losses.size(); ++i) {
    snprintf(buf, sizeof(buf), "epoch=%zu loss=%.6f\n", i, losses[i]);
    log += buf;
  }
  write_text_file((out / "pretrain_log.txt").string(), log);
  printf("pretrain: %d epochs, loss %.6f -> %.6f\n", spec.pretrain.max_epochs,
         losses.empty() ? 0.0 : losses.front(), losses.empty() ? 0.0 : losses.back());
  return 0;
}

int cmd_train(const CliArgs& args) {
  const ExperimentSpec spec = load_spec(args);
  const fs::path out = resolve_out(spec, args);
  WindowedDataset ds = dataset_from_disk(spec, out);

  Checkpoint pretrained;
  bool has_pretrained = false;
  for (RunConfiguration c : spec.configurations)
    if (c != RunConfiguration::FromScratch) {
      const fs::path p =
          args.checkpoint.empty() ? out / "pretrained.ckpt" : fs::path(args.checkpoint);
      if (!fs::exists(p)) throw IoError("pretrained checkpoint not found: " + p.string());
      pretrained = load_checkpoint(p.string());
      has_pretrained = true;
      break;
    }

  ExperimentResult res = run_experiment(spec, ds, has_pretrained ? &pretrained : nullptr, args.jobs);
  fs::create_directories(out / "logs");
  fs::create_directories(out / "checkpoints");
  for (const auto& cr : res.configurations) {
    const std::string cname = configuration_name(cr.configuration);
    for (size_t i = 0; i < cr.runs.size(); ++i) {
      const std::string stem = cname + "_seed" + std::to_string(spec.seed_base + i);
      write_text_file((out / "logs" / (stem + ".log")).string(), run_log_text(cr.runs[i]));
      save_checkpoint(cr.runs[i].checkpoint, (out / "checkpoints" / (stem + ".ckpt")).string());
    }
  }
  const std::string table = results_table_text(res);
  write_text_file((out / "results.txt").string(), table);
  write_text_file((out / "results.csv").string(), results_table_csv(res));
  printf("%s", table.c_str());
  return 0;
}

int cmd_baseline(const CliArgs& args) {
  const ExperimentSpec spec = load_spec(args);
  const fs::path out = resolve_out(spec, args);
  WindowedDataset ds = dataset_from_disk(spec, out);
  if (ds.segmentation()) throw ConfigError("CSP-LDA baseline applies to classification tasks");
  CspLdaResult res = run_csp_lda(ds, spec.csp_candidates);
  MetricSummary s = bootstrap_sd(res.test_scores, res.test_labels, spec.n_boot, spec.dataset.seed);
  char buf[256];
  snprintf(buf, sizeof(buf),
           "csp-lda  n_components=%d\nauroc %.3f \xc2\xb1 %.3f\nb.acc. %.1f%% \xc2\xb1 %.1f\nf1 %.3f \xc2\xb1 %.3f\n",
           res.n_components, s.auroc_mean, s.auroc_sd, 100.0 * s.bac_mean, 100.0 * s.bac_sd,
           s.f1_mean, s.f1_sd);
  write_text_file((out / "baseline.txt").string(), buf);
  char csv[256];
  snprintf(csv, sizeof(csv),
           "n_components,auroc_mean,auroc_sd,bac_mean,bac_sd,f1_mean,f1_sd,n_boot\n"
           "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d\n",
           res.n_components, s.auroc_mean, s.auroc_sd, s.bac_mean, s.bac_sd, s.f1_mean, s.f1_sd,
           s.n_boot);
  write_text_file((out / "baseline.csv").string(), csv);
  printf("%s", buf);
  return 0;
}

void write_figures(const fs::path& dir, const AttributionOutput& att, const Montage& montage,
                   double sample_rate) {
  fs::create_directories(dir);
  write_text_file((dir / "scalp_signed.svg").string(),
                  render_scalp(att.spatial.signed_values, montage, true));
  write_text_file((dir / "scalp_absolute.svg").string(),
                  render_scalp(att.spatial.absolute_values, montage, false));
  write_text_file((dir / "temporal_signed.svg").string(),
                  render_temporal(att.temporal.signed_values, sample_rate));
  write_text_file((dir / "temporal_absolute.svg").string(),
                  render_temporal(att.temporal.absolute_values, sample_rate));
  write_text_file((dir / "heatmap_signed.svg").string(),
                  render_heatmap(att.pattern.signed_map, montage, true));
  write_text_file((dir / "heatmap_absolute.svg").string(),
                  render_heatmap(att.pattern.absolute_map, montage, false));
}

int cmd_attribute(const CliArgs& args) {
  const ExperimentSpec spec = load_spec(args);
  const fs::path out = resolve_out(spec, args);
  WindowedDataset ds = dataset_from_disk(spec, out);
  const fs::path ckpath =
      args.checkpoint.empty()
          ? out / "checkpoints" /
                (args.configuration + "_seed" + std::to_string(spec.seed_base) + ".ckpt")
          : fs::path(args.checkpoint);
  if (!fs::exists(ckpath)) throw IoError("checkpoint not found: " + ckpath.string());
  Model model = Model::from_checkpoint(load_checkpoint(ckpath.string()));

  AttributionOutput att = attribute_split(spec, model, ds, Split::Test);
  att.pattern.configuration = args.configuration;
  att.pattern.seed = spec.seed_base;

  fs::create_directories(out / "attributions");
  for (const auto& r : att.results)
    save_attribution(
        r, (out / "attributions" / ("window_" + std::to_string(r.window_id) + ".att")).string());
  save_aggregate(att.pattern, (out / "aggregate.agg").string());
  write_figures(out / "figures", att, att.pattern.montage,
                static_cast<double>(spec.model.sample_rate));

  std::string report = "task=" + task_name(spec.task) + "\n";
  report += "maps=" + std::to_string(att.pattern.n_contributing_maps) + "\n";
  const auto planted = planted_channel_indices(spec);
  if (!planted.empty()) {
    bool degenerate = false;
    const double score = shortcut_score(att.spatial, planted, &degenerate);
    char buf[128];
    snprintf(buf, sizeof(buf), "shortcut_score=%.6f uniform=%.6f degenerate=%d\n", score,
             static_cast<double>(planted.size()) / att.pattern.montage.size(), degenerate ? 1 : 0);
    report += buf;
  }
  int argmax = 0;
  for (size_t c = 1; c < att.spatial.absolute_values.size(); ++c)
    if (att.spatial.absolute_values[c] > att.spatial.absolute_values[static_cast<size_t>(argmax)])
      argmax = static_cast<int>(c);
  report += "absolute_spatial_argmax=" + att.pattern.montage.names[static_cast<size_t>(argmax)] + "\n";
  write_text_file((out / "report.txt").string(), report);
  printf("%s", report.c_str());
  return 0;
}

int cmd_report(const CliArgs& args) {
  const ExperimentSpec spec = load_spec(args);
  const fs::path out = resolve_out(spec, args);
  const fs::path agg = out / "aggregate.agg";
  if (!fs::exists(agg)) throw IoError("aggregate not found: " + agg.string());
  AggregatePattern p = load_aggregate(agg.string());
  AttributionOutput att;
  att.pattern = p;
  att.spatial = spatial_aggregate(p);
  att.temporal = temporal_aggregate(p);
  write_figures(out / "figures", att, p.montage, static_cast<double>(spec.model.sample_rate));
  printf("report: figures rewritten from %s\n", agg.string().c_str());
  return 0;
}

int cmd_cv(const CliArgs& args) {
  const ExperimentSpec spec = load_spec(args);
  const fs::path out = resolve_out(spec, args);
  WindowedDataset ds = dataset_from_disk(spec, out);
  TrainConfig tc = spec.train_for(RunConfiguration::FromScratch);
  tc.seed = spec.seed_base;
  const auto folds =
      subject_kfold(spec.model, ds, tc, spec.cv_folds, spec.cv_val_subjects, spec.dataset.seed);
  std::vector<Metrics> per_fold;
  std::string text;
  for (size_t i = 0; i < folds.size(); ++i) {
    per_fold.push_back(folds[i].test);
    char buf[160];
    snprintf(buf, sizeof(buf), "fold=%zu auroc=%.4f bac=%.4f f1=%.4f\n", i,
             folds[i].test.auroc.value_or(-1.0), folds[i].test.balanced_accuracy, folds[i].test.f1);
    text += buf;
  }
  MetricSummary s = summarize_runs(per_fold);
  char buf[200];
  snprintf(buf, sizeof(buf),
           "mean auroc %.3f \xc2\xb1 %.3f bac %.1f%% \xc2\xb1 %.1f f1 %.3f \xc2\xb1 %.3f\n",
           s.auroc_mean, s.auroc_sd, 100.0 * s.bac_mean, 100.0 * s.bac_sd, s.f1_mean, s.f1_sd);
  text += buf;
  write_text_file((out / "cv.txt").string(), text);
  printf("%s", text.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic EEG transformer relevance-propagation workbench"};
  app.require_subcommand(1);
  CliArgs args;

  const char* names[] = {"synth", "preprocess", "pretrain", "train",
                         "baseline", "attribute", "cv", "report"};
  const char* descs[] = {"generate synthetic recordings and a split manifest",
                         "run the filter/re-reference/resample pipeline",
                         "masked-token reconstruction pretraining",
                         "train the requested configurations over seeds",
                         "CSP-LDA baseline with bootstrap variance",
                         "relevance maps, aggregates, figures for the test split",
                         "subject-level cross-validation",
                         "re-render figures from a saved aggregate"};
  for (int i = 0; i < 8; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descs[i]);
    sub->add_option("--spec", args.spec_path, "experiment spec (json)")->required();
    sub->add_option("--out", args.out_override, "output directory (overrides spec)");
    sub->add_option("--seed", args.seed_override, "dataset/run seed override");
    sub->add_option("--jobs", args.jobs, "parallel workers across seeds");
    sub->add_option("--checkpoint", args.checkpoint, "checkpoint path (attribute/train)");
    sub->add_option("--configuration", args.configuration, "configuration for attribute");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") return cmd_synth(args);
    if (cmd == "preprocess") return cmd_preprocess(args);
    if (cmd == "pretrain") return cmd_pretrain(args);
    if (cmd == "train") return cmd_train(args);
    if (cmd == "baseline") return cmd_baseline(args);
    if (cmd == "attribute") return cmd_attribute(args);
    if (cmd == "cv") return cmd_cv(args);
    if (cmd == "report") return cmd_report(args);
    return 1;
  } catch (const ConfigError& e) {
    fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const InputError& e) {
    fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    fprintf(stderr, "missing input: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
