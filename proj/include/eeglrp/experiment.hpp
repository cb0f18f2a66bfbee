#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eeglrp/csp.hpp"
#include "eeglrp/report.hpp"
#include "eeglrp/train.hpp"

namespace eeglrp {

enum class TaskKind { RPeak, ShortcutLR, Affect };
std::string task_name(TaskKind t);
TaskKind task_from_name(const std::string& name);

/// Synthetic dataset parameters; one recording per subject, seeded per
/// subject from `seed`.
struct DatasetSpec {
  uint64_t seed = 7;
  int n_subjects = 6;
  double duration_s = 48.0;  // rpeak/affect recordings
  double sample_rate = 250.0;
  std::string montage = "mini8";
  // rpeak
  std::string planted_channel = "Iz";
  double mean_hr_bpm = 72.0;
  double cfa_peak_uv = 120.0;
  double cfa_leak = 0.02;
  // shortcut
  int n_trials = 30;
  double shortcut_snr = 3.0;
  double genuine_snr = 0.0;
  std::vector<std::string> class0_channels = {"Fp1"};
  std::vector<std::string> class1_channels = {"Fp2"};
  std::vector<std::string> genuine_channels = {"C3", "C4"};
  // affect
  std::vector<std::string> driver_channels = {"Pz", "O1"};
  std::string target_name = "arousal";
};

struct ExperimentSpec {
  int version = 1;
  TaskKind task = TaskKind::RPeak;
  DatasetSpec dataset;
  PreprocessSpec preprocess;
  ModelConfig model;
  TrainConfig train;
  std::map<std::string, TrainConfig> train_overrides;  // per configuration name
  std::vector<RunConfiguration> configurations = {RunConfiguration::FromScratch};
  int n_seeds = 5;
  uint64_t seed_base = 0;
  RuleConfig rules;
  int k_pos = 2, k_neg = 2;  // balanced logit subsampling (segmentation)
  PretrainConfig pretrain;
  double window_s = 4.0, stride_s = 1.0;
  double input_scale = 0.1;  // model input units per microvolt
  std::vector<int> csp_candidates = {2, 4, 6, 8};
  int n_boot = 1000;
  int cv_folds = 5, cv_val_subjects = 1;
  std::string out_dir = "runs/out";

  Montage montage_obj() const { return Montage::builtin(dataset.montage); }
  void validate() const;
  TrainConfig train_for(RunConfiguration c) const;
};

/// Parse / serialize the versioned JSON experiment spec.
ExperimentSpec spec_from_json_text(const std::string& text);
std::string spec_to_json_text(const ExperimentSpec& spec);

/// Raw (unpreprocessed) recording of one subject.
Recording synth_subject(const ExperimentSpec& spec, int subject);

/// Windows + labels + subject split for one preprocessed recording.
WindowedDataset windows_for_task(const ExperimentSpec& spec, const Recording& rec, int subject,
                                 Split split);

/// Synthesize, preprocess and window the whole dataset in memory.
WindowedDataset build_dataset(const ExperimentSpec& spec);

struct ConfigurationResult {
  RunConfiguration configuration = RunConfiguration::FromScratch;
  std::vector<RunResult> runs;
  MetricSummary summary;
};

struct ExperimentResult {
  std::vector<ConfigurationResult> configurations;
};

/// Model set up for one run: seeded init, backbone loaded for finetuned and
/// frozen configurations (MLP head swapped in for frozen linear heads).
Model make_run_model(const ExperimentSpec& spec, RunConfiguration cfg, uint64_t seed,
                     const Checkpoint* pretrained);

/// Train n_seeds runs per configuration; `jobs` > 1 parallelizes across seeds.
ExperimentResult run_experiment(const ExperimentSpec& spec, const WindowedDataset& ds,
                                const Checkpoint* pretrained, int jobs = 1);

std::string results_table_text(const ExperimentResult& r);
std::string results_table_csv(const ExperimentResult& r);
std::string run_log_text(const RunResult& run);

struct AttributionOutput {
  std::vector<AttributionResult> results;
  AggregatePattern pattern;
  SpatialAggregate spatial;
  TemporalAggregate temporal;
};

/// LRP over every window of one split (2+2 logit subsampling on segmentation
/// tasks), aggregated.
AttributionOutput attribute_split(const ExperimentSpec& spec, const Model& model,
                                  const WindowedDataset& ds, Split split);

/// Planted channel indices of the spec's task (shortcut channels or the CFA
/// channel), for localization scoring.
std::vector<int> planted_channel_indices(const ExperimentSpec& spec);

}  // namespace eeglrp
