#pragma once

#include <optional>
#include <string>
#include <vector>

#include "eeglrp/rng.hpp"
#include "eeglrp/tensor.hpp"

namespace eeglrp {

/// Named electrode set with 2D scalp coordinates (unit head circle, nasion up).
struct Montage {
  std::vector<std::string> names;
  std::vector<std::pair<double, double>> coords;

  int size() const { return static_cast<int>(names.size()); }
  int index_of(const std::string& name) const;  // -1 if absent
  void validate() const;

  /// Built-in montages: "mini8" (Fp1 Fp2 C3 C4 Pz O1 O2 Iz) and "mini4".
  static Montage builtin(const std::string& name);
};

struct Event {
  int64_t sample = 0;
  std::string label;
};

struct ContinuousTarget {
  std::string name;            // arousal | valence
  std::vector<double> values;  // 1 Hz
};

/// Multi-channel EEG in microvolts with annotations.
struct Recording {
  Tensor data;  // [n_channels, n_samples]
  double sample_rate = 0.0;
  Montage montage;
  std::vector<Event> events;
  std::optional<ContinuousTarget> continuous_target;

  int n_channels() const { return data.rank() == 2 ? data.dim(0) : 0; }
  int64_t n_samples() const { return data.rank() == 2 ? data.dim(1) : 0; }
  void validate() const;
};

enum class Split { Train, Val, Test };
std::string split_name(Split s);

/// Fixed-length windows with binary labels, per window or per timestep.
struct WindowedDataset {
  Tensor windows;                       // [n_windows, n_channels, t_in]
  std::vector<int> window_labels;       // per-window labels (classification)
  std::vector<std::vector<int>> timestep_labels;  // per-timestep labels (segmentation)
  std::vector<int> subject;             // subject id per window
  std::vector<Split> split;             // split tag per window
  std::string warning;                  // set when a recording was too short

  int n_windows() const { return windows.rank() == 3 ? windows.dim(0) : 0; }
  int n_channels() const { return windows.rank() == 3 ? windows.dim(1) : 0; }
  int t_in() const { return windows.rank() == 3 ? windows.dim(2) : 0; }
  bool segmentation() const { return !timestep_labels.empty(); }

  Tensor window_at(int i) const;
  std::vector<int> indices_of(Split s) const;
  void append(const WindowedDataset& other);
};

// ---- preprocessing (order per pipeline: bandpass, notch, re-reference,
// resample) ---------------------------------------------------------------

/// Linear-phase windowed-sinc FIR bandpass with group-delay compensation;
/// length preserved via mirror edge padding. DC is nulled exactly by
/// construction. The first and last (taps-1)/2 samples carry the usual FIR
/// startup transient; attenuation figures hold in steady state.
Recording fir_bandpass(const Recording& rec, double low_hz, double high_hz);

/// Narrow FIR band-stop centered on `freq`; same edge semantics as
/// fir_bandpass.
Recording notch_filter(const Recording& rec, double freq_hz);

/// Band-limited windowed-sinc resampling; event indices rescaled.
Recording resample(const Recording& rec, double target_hz);

/// Subtract the per-sample mean across channels.
Recording average_rereference(const Recording& rec);

struct PreprocessSpec {
  std::optional<std::pair<double, double>> bandpass = {{0.1, 75.0}};
  std::optional<double> notch = 50.0;
  bool rereference = true;
  std::optional<double> resample_to = 200.0;
};

/// The canonical pipeline in its fixed order.
Recording preprocess(const Recording& rec, const PreprocessSpec& spec);

// ---- task construction ----------------------------------------------------

/// Binary per-timestep target: round(0.020 * sample_rate) samples around each
/// peak set to 1 ([peak-2, peak+2) at 200 Hz); overlapping windows merge.
std::vector<int> make_rpeak_target(const Recording& rec, const std::vector<int64_t>& peaks);

/// High iff strictly greater than the series median.
std::vector<int> median_binarize(const std::vector<double>& series);

enum class WindowLabeling { ContinuousMedian, PerTimestep, None };

/// Rolling windows (default 4 s / 1 s). ContinuousMedian labels each window
/// by the binarized 1 Hz target at the last step the window covers;
/// PerTimestep slices `timestep_target` into the windows.
WindowedDataset rolling_windows(const Recording& rec, double window_s, double stride_s,
                                WindowLabeling labeling,
                                const std::vector<int>* timestep_target = nullptr);

/// One window of `window_s` starting at each labeled event; labels are
/// event-name indices in `class_names` (windows for other labels dropped).
WindowedDataset epoch_windows(const Recording& rec, double window_s,
                              const std::vector<std::string>& class_names);

/// Seeded subject split, 80:10:10 with at least one val/test subject.
std::vector<Split> split_subjects(int n_subjects, uint64_t seed);

// ---- synthetic recordings with planted ground truth ------------------------

struct CfaSpec {
  uint64_t seed = 0;
  double duration_s = 60.0;
  double sample_rate = 250.0;
  Montage montage = Montage::builtin("mini8");
  std::string planted_channel = "Iz";
  double mean_hr_bpm = 72.0;
  double noise_rms_uv = 5.0;
  double peak_amplitude_uv = 60.0;
  double leak_fraction = 0.06;  // template amplitude on non-planted channels
};

/// Pink-noise EEG with a stereotyped R-wave planted on one channel at
/// quasi-periodic intervals; peaks annotated as events labeled "rpeak".
Recording synth_cfa(const CfaSpec& spec);

struct ShortcutSpec {
  uint64_t seed = 0;
  double sample_rate = 250.0;
  Montage montage = Montage::builtin("mini8");
  std::vector<std::string> class0_channels = {"Fp1"};
  std::vector<std::string> class1_channels = {"Fp2"};
  std::vector<std::string> genuine_channels = {"C3", "C4"};  // lateralized pair
  int n_trials = 40;
  double trial_s = 5.0;
  double gap_s = 1.0;
  double shortcut_snr = 3.0;  // drift amplitude over noise RMS
  double genuine_snr = 0.0;   // 10 Hz modulation amplitude over noise RMS
  double noise_rms_uv = 5.0;
};

/// Trial-structured recording with a low-frequency frontal drift planted per
/// class and an optional weak lateralized 10 Hz signal; events "left"/"right"
/// mark trial onsets.
Recording synth_shortcut(const ShortcutSpec& spec);

struct AffectSpec {
  uint64_t seed = 0;
  double duration_s = 600.0;
  double sample_rate = 250.0;
  Montage montage = Montage::builtin("mini8");
  std::vector<std::string> driver_channels = {"Pz", "O1"};
  std::string target_name = "arousal";
  double noise_rms_uv = 5.0;
  double carrier_uv = 8.0;
};

/// Smooth random-walk 1 Hz target; 10 Hz power on driver channels follows it.
Recording synth_affect(const AffectSpec& spec);

/// Pink noise (1/f) with unit RMS, deterministic per rng stream.
std::vector<double> pink_noise(Rng& rng, int64_t n);

}  // namespace eeglrp
