#include "eeglrp/signal.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace eeglrp {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

int Montage::index_of(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

void Montage::validate() const {
  if (names.size() != coords.size()) throw ConfigError("montage names/coords length mismatch");
  std::set<std::string> seen;
  for (const auto& n : names)
    if (!seen.insert(n).second) throw ConfigError("duplicate electrode name " + n);
  for (const auto& [x, y] : coords)
    if (x * x + y * y > 1.0 + 1e-12)
      throw ConfigError("electrode coordinates must lie within the unit disc");
}

Montage Montage::builtin(const std::string& name) {
  Montage m;
  if (name == "mini8") {
    m.names = {"Fp1", "Fp2", "C3", "C4", "Pz", "O1", "O2", "Iz"};
    m.coords = {{-0.25, 0.76}, {0.25, 0.76}, {-0.40, 0.00}, {0.40, 0.00},
                {0.00, -0.40}, {-0.25, -0.76}, {0.25, -0.76}, {0.00, -0.95}};
  } else if (name == "mini4") {
    m.names = {"Fp1", "Fp2", "O1", "O2"};
    m.coords = {{-0.25, 0.76}, {0.25, 0.76}, {-0.25, -0.76}, {0.25, -0.76}};
  } else {
    throw ConfigError("unknown builtin montage " + name);
  }
  return m;
}

void Recording::validate() const {
  if (data.rank() != 2) throw ConfigError("recording data must be [n_channels, n_samples]");
  if (sample_rate <= 0.0) throw ConfigError("sample rate must be positive");
  montage.validate();
  if (montage.size() != n_channels())
    throw ConfigError("montage size does not match channel count");
  for (const auto& e : events)
    if (e.sample < 0 || e.sample >= n_samples())
      throw ConfigError("event index out of bounds");
  if (continuous_target) {
    const auto expect = static_cast<int64_t>(std::floor(n_samples() / sample_rate));
    if (static_cast<int64_t>(continuous_target->values.size()) != expect)
      throw ConfigError("continuous target length must be floor(n_samples / sample_rate)");
  }
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Tensor WindowedDataset::window_at(int i) const {
  const int c = n_channels(), t = t_in();
  Tensor w({c, t});
  const double* src = windows.data() + static_cast<int64_t>(i) * c * t;
  std::copy(src, src + static_cast<int64_t>(c) * t, w.data());
  return w;
}

std::vector<int> WindowedDataset::indices_of(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(static_cast<int>(i));
  return out;
}

void WindowedDataset::append(const WindowedDataset& other) {
  if (other.n_windows() == 0) return;
  if (n_windows() == 0) {
    *this = other;
    return;
  }
  if (other.n_channels() != n_channels() || other.t_in() != t_in())
    throw ShapeError("cannot append datasets of different window shapes");
  if (other.segmentation() != segmentation())
    throw InputError("cannot mix per-window and per-timestep labels");
  std::vector<double> all = windows.vec();
  all.insert(all.end(), other.windows.vec().begin(), other.windows.vec().end());
  windows = Tensor({n_windows() + other.n_windows(), n_channels(), t_in()}, std::move(all));
  window_labels.insert(window_labels.end(), other.window_labels.begin(), other.window_labels.end());
  timestep_labels.insert(timestep_labels.end(), other.timestep_labels.begin(),
                         other.timestep_labels.end());
  subject.insert(subject.end(), other.subject.begin(), other.subject.end());
  split.insert(split.end(), other.split.begin(), other.split.end());
}

// ---- FIR design -----------------------------------------------------------

namespace {

// Hamming-windowed sinc lowpass, unit DC gain by exact normalization.
std::vector<double> lowpass_kernel(double fc_norm, int taps) {
  std::vector<double> h(static_cast<size_t>(taps));
  const int mid = (taps - 1) / 2;
  double sum = 0.0;
  for (int i = 0; i < taps; ++i) {
    const double u = i - mid;
    const double s = (u == 0.0) ? 2.0 * fc_norm : std::sin(2.0 * kPi * fc_norm * u) / (kPi * u);
    const double w = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (taps - 1));
    h[static_cast<size_t>(i)] = s * w;
    sum += h[static_cast<size_t>(i)];
  }
  for (auto& v : h) v /= sum;
  return h;
}

int odd_taps(double fs, double transition_hz) {
  int taps = static_cast<int>(std::ceil(3.3 * fs / transition_hz));
  if (taps % 2 == 0) ++taps;
  return std::max(taps, 11);
}

// Apply a linear-phase kernel per channel with mirror edge padding (keeps
// the local spectrum of the edges, constants stay constant); the (taps-1)/2
// group delay cancels against the padding.
Tensor apply_fir(const Tensor& data, const std::vector<double>& h) {
  const int c = data.dim(0);
  const int64_t n = data.dim(1);
  const int taps = static_cast<int>(h.size());
  const int m = (taps - 1) / 2;
  Tensor out({c, static_cast<int>(n)});
  std::vector<double> pad(static_cast<size_t>(n + 2 * m));
  auto mirror = [&](int64_t idx) {
    // reflect about the first/last sample without duplicating the edge
    const int64_t period = 2 * (n - 1);
    if (period == 0) return int64_t{0};
    int64_t k = std::abs(idx) % period;
    return k < n ? k : period - k;
  };
  for (int ch = 0; ch < c; ++ch) {
    const double* x = data.data() + static_cast<int64_t>(ch) * n;
    for (int i = 0; i < m; ++i) pad[static_cast<size_t>(i)] = x[mirror(i - m)];
    std::copy(x, x + n, pad.begin() + m);
    for (int i = 0; i < m; ++i) pad[static_cast<size_t>(n + m + i)] = x[mirror(n + i)];
    double* y = out.data() + static_cast<int64_t>(ch) * n;
    for (int64_t t = 0; t < n; ++t) {
      double acc = 0.0;
      const double* p = pad.data() + t;
      for (int k = 0; k < taps; ++k) acc += h[static_cast<size_t>(k)] * p[k];
      y[t] = acc;
    }
  }
  return out;
}

}  // namespace

Recording fir_bandpass(const Recording& rec, double low_hz, double high_hz) {
  const double fs = rec.sample_rate;
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0))
    throw InputError("bandpass requires 0 < low < high < rate/2");
  // Transition widths floored so kernels stay practical at desk scale; the
  // difference-of-lowpass construction nulls DC exactly regardless.
  const double tw_low = std::max(0.25 * low_hz, 1.0);
  const double tw_high = std::min(std::max(0.25 * high_hz, 2.0), fs / 2.0 - high_hz);
  const int taps = odd_taps(fs, std::min(tw_low, tw_high));
  const double fc_lo = std::max(low_hz - tw_low / 2.0, low_hz / 2.0) / fs;
  const double fc_hi = std::min(high_hz + tw_high / 2.0, 0.4995 * fs) / fs;
  auto hi = lowpass_kernel(fc_hi, taps);
  auto lo = lowpass_kernel(fc_lo, taps);
  for (size_t i = 0; i < hi.size(); ++i) hi[i] -= lo[i];
  Recording out = rec;
  out.data = apply_fir(rec.data, hi);
  return out;
}

Recording notch_filter(const Recording& rec, double freq_hz) {
  const double fs = rec.sample_rate;
  const double half = 1.5, tw = 2.0;
  if (!(freq_hz > half + tw && freq_hz + half + tw < fs / 2.0))
    throw InputError("notch frequency out of range for this sample rate");
  const int taps = odd_taps(fs, tw);
  auto bp = lowpass_kernel((freq_hz + half) / fs, taps);
  auto lo = lowpass_kernel((freq_hz - half) / fs, taps);
  for (size_t i = 0; i < bp.size(); ++i) bp[i] = -(bp[i] - lo[i]);
  bp[static_cast<size_t>((taps - 1) / 2)] += 1.0;  // spectral inversion
  Recording out = rec;
  out.data = apply_fir(rec.data, bp);
  return out;
}

Recording resample(const Recording& rec, double target_hz) {
  if (!(target_hz > 0.0)) throw InputError("resample target must be positive");
  if (target_hz == rec.sample_rate) return rec;
  const double fs = rec.sample_rate;
  const int64_t n = rec.n_samples();
  const int64_t n_out = std::llround(static_cast<double>(n) * target_hz / fs);
  const int c = rec.n_channels();
  const double ratio = fs / target_hz;  // input samples per output sample
  const int half = 32;
  const double fc = 0.475 * std::min(1.0, target_hz / fs);  // cycles per input sample

  Tensor out({c, static_cast<int>(n_out)});
  for (int ch = 0; ch < c; ++ch) {
    const double* x = rec.data.data() + static_cast<int64_t>(ch) * n;
    double* y = out.data() + static_cast<int64_t>(ch) * n_out;
    for (int64_t t = 0; t < n_out; ++t) {
      const double pos = static_cast<double>(t) * ratio;
      const int64_t base = static_cast<int64_t>(std::floor(pos));
      double acc = 0.0, wsum = 0.0;
      for (int64_t k = base - half + 1; k <= base + half; ++k) {
        const double u = static_cast<double>(k) - pos;
        const double s = (u == 0.0) ? 2.0 * fc : std::sin(2.0 * kPi * fc * u) / (kPi * u);
        const double w = s * (0.54 + 0.46 * std::cos(kPi * u / half));
        const int64_t idx = std::clamp<int64_t>(k, 0, n - 1);
        acc += w * x[idx];
        wsum += w;
      }
      y[t] = acc / wsum;
    }
  }
  Recording res = rec;
  res.data = std::move(out);
  res.sample_rate = target_hz;
  for (auto& e : res.events)
    e.sample = std::clamp<int64_t>(std::llround(static_cast<double>(e.sample) * target_hz / fs),
                                   0, n_out - 1);
  return res;
}

Recording average_rereference(const Recording& rec) {
  if (rec.n_channels() < 2) throw InputError("average re-reference needs >= 2 channels");
  Recording out = rec;
  const int c = rec.n_channels();
  const int64_t n = rec.n_samples();
  for (int64_t t = 0; t < n; ++t) {
    double mean = 0.0;
    for (int ch = 0; ch < c; ++ch) mean += rec.data.data()[static_cast<int64_t>(ch) * n + t];
    mean /= c;
    for (int ch = 0; ch < c; ++ch) out.data.data()[static_cast<int64_t>(ch) * n + t] -= mean;
  }
  return out;
}

Recording preprocess(const Recording& rec, const PreprocessSpec& spec) {
  Recording r = rec;
  if (spec.bandpass) r = fir_bandpass(r, spec.bandpass->first, spec.bandpass->second);
  if (spec.notch) r = notch_filter(r, *spec.notch);
  if (spec.rereference) r = average_rereference(r);
  if (spec.resample_to) r = resample(r, *spec.resample_to);
  return r;
}

// ---- task construction ------------------------------------------------------

std::vector<int> make_rpeak_target(const Recording& rec, const std::vector<int64_t>& peaks) {
  const int64_t n = rec.n_samples();
  std::vector<int> target(static_cast<size_t>(n), 0);
  const int w = static_cast<int>(std::llround(0.020 * rec.sample_rate));
  const int lo = w / 2;
  for (size_t i = 0; i < peaks.size(); ++i) {
    if (i > 0 && peaks[i] < peaks[i - 1]) throw InputError("peaks must be sorted");
    if (peaks[i] < 0 || peaks[i] >= n) throw InputError("peak index out of bounds");
    const int64_t a = std::max<int64_t>(0, peaks[i] - lo);
    const int64_t b = std::min<int64_t>(n, peaks[i] - lo + w);
    for (int64_t t = a; t < b; ++t) target[static_cast<size_t>(t)] = 1;
  }
  return target;
}

std::vector<int> median_binarize(const std::vector<double>& series) {
  if (series.empty()) throw InputError("median_binarize on empty series");
  std::vector<double> sorted = series;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  const double median =
      (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<int> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = series[i] > median ? 1 : 0;
  return out;
}

WindowedDataset rolling_windows(const Recording& rec, double window_s, double stride_s,
                                WindowLabeling labeling, const std::vector<int>* timestep_target) {
  const int64_t n = rec.n_samples();
  const int c = rec.n_channels();
  const int t_in = static_cast<int>(std::llround(window_s * rec.sample_rate));
  const int stride = static_cast<int>(std::llround(stride_s * rec.sample_rate));
  if (t_in <= 0 || stride <= 0) throw InputError("window and stride must be positive");

  WindowedDataset ds;
  if (n < t_in) {
    ds.windows = Tensor({0, c, t_in});
    ds.warning = "recording shorter than one window";
    return ds;
  }
  std::vector<int> binarized;
  if (labeling == WindowLabeling::ContinuousMedian) {
    if (!rec.continuous_target) throw InputError("recording has no continuous target");
    binarized = median_binarize(rec.continuous_target->values);
  }
  if (labeling == WindowLabeling::PerTimestep) {
    if (!timestep_target || static_cast<int64_t>(timestep_target->size()) != n)
      throw InputError("per-timestep target must cover the recording");
  }

  const int count = static_cast<int>((n - t_in) / stride + 1);
  ds.windows = Tensor({count, c, t_in});
  for (int wi = 0; wi < count; ++wi) {
    const int64_t s = static_cast<int64_t>(wi) * stride;
    for (int ch = 0; ch < c; ++ch) {
      const double* src = rec.data.data() + static_cast<int64_t>(ch) * n + s;
      double* dst = ds.windows.data() + (static_cast<int64_t>(wi) * c + ch) * t_in;
      std::copy(src, src + t_in, dst);
    }
    if (labeling == WindowLabeling::ContinuousMedian) {
      // most recent fully covered 1 Hz step labels the window
      int64_t step = static_cast<int64_t>((s + t_in) / std::llround(rec.sample_rate)) - 1;
      step = std::clamp<int64_t>(step, 0, static_cast<int64_t>(binarized.size()) - 1);
      ds.window_labels.push_back(binarized[static_cast<size_t>(step)]);
    } else if (labeling == WindowLabeling::PerTimestep) {
      ds.timestep_labels.emplace_back(timestep_target->begin() + s,
                                      timestep_target->begin() + s + t_in);
    }
    ds.subject.push_back(0);
    ds.split.push_back(Split::Train);
  }
  return ds;
}

WindowedDataset epoch_windows(const Recording& rec, double window_s,
                              const std::vector<std::string>& class_names) {
  const int64_t n = rec.n_samples();
  const int c = rec.n_channels();
  const int t_in = static_cast<int>(std::llround(window_s * rec.sample_rate));
  std::vector<std::pair<int64_t, int>> picks;
  for (const auto& e : rec.events) {
    for (size_t k = 0; k < class_names.size(); ++k)
      if (e.label == class_names[k] && e.sample + t_in <= n)
        picks.emplace_back(e.sample, static_cast<int>(k));
  }
  WindowedDataset ds;
  ds.windows = Tensor({static_cast<int>(picks.size()), c, t_in});
  for (size_t wi = 0; wi < picks.size(); ++wi) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = rec.data.data() + static_cast<int64_t>(ch) * n + picks[wi].first;
      double* dst = ds.windows.data() + (static_cast<int64_t>(wi) * c + ch) * t_in;
      std::copy(src, src + t_in, dst);
    }
    ds.window_labels.push_back(picks[wi].second);
    ds.subject.push_back(0);
    ds.split.push_back(Split::Train);
  }
  return ds;
}

std::vector<Split> split_subjects(int n_subjects, uint64_t seed) {
  if (n_subjects < 3) throw InputError("subject split needs at least 3 subjects");
  std::vector<int> ids(static_cast<size_t>(n_subjects));
  for (int i = 0; i < n_subjects; ++i) ids[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(ids);
  const int n_test = std::max(1, static_cast<int>(std::llround(0.1 * n_subjects)));
  const int n_val = std::max(1, static_cast<int>(std::llround(0.1 * n_subjects)));
  std::vector<Split> out(static_cast<size_t>(n_subjects), Split::Train);
  for (int i = 0; i < n_test; ++i) out[static_cast<size_t>(ids[static_cast<size_t>(i)])] = Split::Test;
  for (int i = n_test; i < n_test + n_val; ++i)
    out[static_cast<size_t>(ids[static_cast<size_t>(i)])] = Split::Val;
  return out;
}

// ---- synthetic recordings ----------------------------------------------------

std::vector<double> pink_noise(Rng& rng, int64_t n) {
  // Kellet's 1/f filter; normalized to unit RMS afterwards.
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  std::vector<double> out(static_cast<size_t>(n));
  auto step = [&](double w) {
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    const double p = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
    return p;
  };
  for (int i = 0; i < 1000; ++i) step(rng.gaussian());  // settle the filter
  double rms = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    out[static_cast<size_t>(i)] = step(rng.gaussian());
    rms += out[static_cast<size_t>(i)] * out[static_cast<size_t>(i)];
  }
  rms = std::sqrt(rms / static_cast<double>(n));
  if (rms > 0)
    for (auto& v : out) v /= rms;
  return out;
}

namespace {

Recording noise_background(const Montage& montage, double fs, int64_t n, double rms, Rng& rng) {
  Recording rec;
  rec.montage = montage;
  rec.sample_rate = fs;
  rec.data = Tensor({montage.size(), static_cast<int>(n)});
  for (int ch = 0; ch < montage.size(); ++ch) {
    auto noise = pink_noise(rng, n);
    double* dst = rec.data.data() + static_cast<int64_t>(ch) * n;
    for (int64_t i = 0; i < n; ++i) dst[i] = rms * noise[static_cast<size_t>(i)];
  }
  return rec;
}

}  // namespace

Recording synth_cfa(const CfaSpec& spec) {
  spec.montage.validate();
  const int planted = spec.montage.index_of(spec.planted_channel);
  if (planted < 0) throw InputError("planted channel " + spec.planted_channel + " not in montage");
  const double fs = spec.sample_rate;
  const int64_t n = std::llround(spec.duration_s * fs);
  Rng rng(spec.seed);
  Recording rec = noise_background(spec.montage, fs, n, spec.noise_rms_uv, rng);

  // stereotyped R wave: sharp positive peak with small q/s side lobes
  const int half = static_cast<int>(std::llround(0.06 * fs));
  std::vector<double> tpl(static_cast<size_t>(2 * half + 1));
  for (int i = -half; i <= half; ++i) {
    const double t = i / fs;
    double v = std::exp(-0.5 * (t / 0.007) * (t / 0.007));
    v -= 0.15 * std::exp(-0.5 * ((t + 0.025) / 0.010) * ((t + 0.025) / 0.010));
    v -= 0.20 * std::exp(-0.5 * ((t - 0.030) / 0.012) * ((t - 0.030) / 0.012));
    tpl[static_cast<size_t>(i + half)] = v;
  }

  const double interval = 60.0 / spec.mean_hr_bpm;
  double t = 0.5;
  while (t < spec.duration_s - 0.5) {
    const int64_t peak = std::llround(t * fs);
    for (int ch = 0; ch < rec.n_channels(); ++ch) {
      const double amp =
          spec.peak_amplitude_uv * (ch == planted ? 1.0 : spec.leak_fraction);
      double* dst = rec.data.data() + static_cast<int64_t>(ch) * n;
      for (int i = -half; i <= half; ++i) {
        const int64_t idx = peak + i;
        if (idx >= 0 && idx < n) dst[idx] += amp * tpl[static_cast<size_t>(i + half)];
      }
    }
    rec.events.push_back({peak, "rpeak"});
    double jitter = rng.gaussian() * 0.04;
    jitter = std::clamp(jitter, -0.12, 0.12);
    t += interval * (1.0 + jitter);
  }
  return rec;
}

Recording synth_shortcut(const ShortcutSpec& spec) {
  spec.montage.validate();
  auto resolve = [&](const std::vector<std::string>& names) {
    std::vector<int> idx;
    for (const auto& nm : names) {
      const int i = spec.montage.index_of(nm);
      if (i < 0) throw InputError("channel " + nm + " not in montage");
      idx.push_back(i);
    }
    return idx;
  };
  const auto c0 = resolve(spec.class0_channels);
  const auto c1 = resolve(spec.class1_channels);
  for (int a : c0)
    for (int b : c1)
      if (a == b) throw InputError("class channel sets must be disjoint");
  const auto gen = resolve(spec.genuine_channels);
  if (spec.genuine_snr > 0.0 && gen.size() != 2)
    throw InputError("genuine signal needs a lateralized channel pair");

  const double fs = spec.sample_rate;
  const double total_s = spec.gap_s + spec.n_trials * (spec.trial_s + spec.gap_s);
  const int64_t n = std::llround(std::ceil(total_s) * fs);
  Rng rng(spec.seed);
  Recording rec = noise_background(spec.montage, fs, n, spec.noise_rms_uv, rng);

  std::vector<int> labels(static_cast<size_t>(spec.n_trials));
  for (int i = 0; i < spec.n_trials; ++i) labels[static_cast<size_t>(i)] = i % 2;
  rng.shuffle(labels);

  const int64_t trial_len = std::llround(spec.trial_s * fs);
  for (int tr = 0; tr < spec.n_trials; ++tr) {
    const double t0 = spec.gap_s + tr * (spec.trial_s + spec.gap_s);
    const int64_t s0 = std::llround(t0 * fs);
    const int cls = labels[static_cast<size_t>(tr)];
    // class-specific drift bands, like directional eye movements with
    // distinct waveforms; both stay below 4 Hz
    const double freq = cls == 0 ? rng.uniform(1.0, 2.0) : rng.uniform(3.0, 4.0);
    const double phase = rng.uniform(0.0, 2.0 * kPi);

    auto hann = [&](int64_t i) {
      return 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) /
                                   static_cast<double>(trial_len - 1)));
    };

    if (spec.shortcut_snr > 0.0) {
      // saccade-like square drift: step edges, class-specific rate
      const double amp = spec.shortcut_snr * spec.noise_rms_uv;
      for (int ch : (cls == 0 ? c0 : c1)) {
        double* dst = rec.data.data() + static_cast<int64_t>(ch) * n;
        for (int64_t i = 0; i < trial_len && s0 + i < n; ++i) {
          const double wave = std::sin(2.0 * kPi * freq * (i / fs) + phase) >= 0.0 ? 1.0 : -1.0;
          dst[s0 + i] += amp * hann(i) * wave;
        }
      }
    }
    if (spec.genuine_snr > 0.0) {
      const double amp = spec.genuine_snr * spec.noise_rms_uv;
      const double strong[2] = {amp, 0.3 * amp};
      for (int side = 0; side < 2; ++side) {
        const double a = (cls == side) ? strong[0] : strong[1];
        double* dst = rec.data.data() + static_cast<int64_t>(gen[static_cast<size_t>(side)]) * n;
        for (int64_t i = 0; i < trial_len && s0 + i < n; ++i)
          dst[s0 + i] += a * hann(i) * std::sin(2.0 * kPi * 10.0 * (i / fs));
      }
    }
    rec.events.push_back({s0, cls == 0 ? "left" : "right"});
  }
  return rec;
}

Recording synth_affect(const AffectSpec& spec) {
  if (spec.duration_s < 8.0) throw InputError("affect recording must be at least 8 s");
  spec.montage.validate();
  std::vector<int> drivers;
  for (const auto& nm : spec.driver_channels) {
    const int i = spec.montage.index_of(nm);
    if (i < 0) throw InputError("driver channel " + nm + " not in montage");
    drivers.push_back(i);
  }
  const double fs = spec.sample_rate;
  const int64_t n = std::llround(spec.duration_s * fs);
  Rng rng(spec.seed);
  Recording rec = noise_background(spec.montage, fs, n, spec.noise_rms_uv, rng);

  // smooth random-walk 1 Hz target, z-normalized
  const int64_t steps = static_cast<int64_t>(std::floor(spec.duration_s));
  std::vector<double> walk(static_cast<size_t>(steps));
  double v = 0.0;
  for (int64_t k = 0; k < steps; ++k) {
    v += 0.4 * rng.gaussian();
    walk[static_cast<size_t>(k)] = v;
  }
  std::vector<double> target(static_cast<size_t>(steps));
  for (int64_t k = 0; k < steps; ++k) {
    double acc = 0.0;
    int cnt = 0;
    for (int64_t j = std::max<int64_t>(0, k - 4); j <= std::min(steps - 1, k + 4); ++j) {
      acc += walk[static_cast<size_t>(j)];
      ++cnt;
    }
    target[static_cast<size_t>(k)] = acc / cnt;
  }
  double mean = 0.0, sd = 0.0;
  for (double x : target) mean += x;
  mean /= static_cast<double>(steps);
  for (double x : target) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(steps));
  if (sd <= 0) sd = 1.0;
  for (auto& x : target) x = (x - mean) / sd;

  // 10 Hz carrier on the driver channels, amplitude following the target
  for (int ch : drivers) {
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    double* dst = rec.data.data() + static_cast<int64_t>(ch) * n;
    for (int64_t i = 0; i < n; ++i) {
      const double ts = i / fs;
      const int64_t k = std::min<int64_t>(static_cast<int64_t>(ts), steps - 1);
      const int64_t k2 = std::min(k + 1, steps - 1);
      const double frac = ts - static_cast<double>(k);
      const double z = (1.0 - frac) * target[static_cast<size_t>(k)] +
                       frac * target[static_cast<size_t>(k2)];
      const double amp = spec.carrier_uv * (1.1 + 0.5 * std::tanh(z));
      dst[i] += amp * std::sin(2.0 * kPi * 10.0 * ts + phase);
    }
  }
  rec.continuous_target = ContinuousTarget{spec.target_name, std::move(target)};
  return rec;
}

}  // namespace eeglrp
