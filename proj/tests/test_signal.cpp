#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "eeglrp/signal.hpp"

using namespace eeglrp;

namespace {

constexpr double kPi = 3.14159265358979323846;

Recording sine_recording(double freq, double fs, double dur_s, int channels = 2,
                         double amp = 10.0) {
  Recording rec;
  rec.montage = channels == 8 ? Montage::builtin("mini8") : Montage::builtin("mini4");
  rec.montage.names.resize(static_cast<size_t>(channels));
  rec.montage.coords.resize(static_cast<size_t>(channels));
  rec.sample_rate = fs;
  const auto n = static_cast<int>(std::llround(dur_s * fs));
  rec.data = Tensor({channels, n});
  for (int c = 0; c < channels; ++c)
    for (int t = 0; t < n; ++t)
      rec.data.at(c, t) = amp * std::sin(2.0 * kPi * freq * t / fs + 0.3 * c);
  return rec;
}

double rms(const Recording& rec, int channel, int64_t from = 0, int64_t to = -1) {
  if (to < 0) to = rec.n_samples();
  double acc = 0.0;
  for (int64_t t = from; t < to; ++t) acc += rec.data.at(channel, static_cast<int>(t)) *
                                              rec.data.at(channel, static_cast<int>(t));
  return std::sqrt(acc / static_cast<double>(to - from));
}

// amplitude of `freq` per 1 s block via quadrature correlation
std::vector<double> tone_envelope(const Recording& rec, int channel, double freq) {
  const auto fs = static_cast<int64_t>(std::llround(rec.sample_rate));
  const int64_t steps = rec.n_samples() / fs;
  std::vector<double> env(static_cast<size_t>(steps));
  for (int64_t k = 0; k < steps; ++k) {
    double si = 0.0, co = 0.0;
    for (int64_t t = k * fs; t < (k + 1) * fs; ++t) {
      const double ph = 2.0 * kPi * freq * static_cast<double>(t) / rec.sample_rate;
      si += rec.data.at(channel, static_cast<int>(t)) * std::sin(ph);
      co += rec.data.at(channel, static_cast<int>(t)) * std::cos(ph);
    }
    env[static_cast<size_t>(k)] =
        2.0 * std::sqrt(si * si + co * co) / static_cast<double>(fs);
  }
  return env;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = std::min(a.size(), b.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, va = 0, vb = 0;
  for (size_t i = 0; i < n; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("montage lookups and validation") {
  Montage m = Montage::builtin("mini8");
  CHECK(m.size() == 8);
  CHECK(m.index_of("Iz") == 7);
  CHECK(m.index_of("Qq") == -1);
  CHECK_THROWS_AS(Montage::builtin("nope"), ConfigError);
  Montage dup = m;
  dup.names[1] = "Fp1";
  CHECK_THROWS_AS(dup.validate(), ConfigError);
  Montage far = m;
  far.coords[0] = {1.5, 0.0};
  CHECK_THROWS_AS(far.validate(), ConfigError);
}

TEST_CASE("bandpass preserves passband tones, kills DC, keeps length") {
  Recording rec = sine_recording(10.0, 250.0, 30.0);
  Recording out = fir_bandpass(rec, 0.1, 75.0);
  CHECK(out.n_samples() == rec.n_samples());
  // steady state: skip the startup transient of one kernel half per side
  const int64_t margin = 500;
  const double r_in = rms(rec, 0, margin, rec.n_samples() - margin);
  const double r_out = rms(out, 0, margin, out.n_samples() - margin);
  CHECK(std::abs(r_out - r_in) / r_in <= 0.05);

  Recording dc = rec;
  for (int64_t i = 0; i < dc.data.numel(); ++i) dc.data[i] = 42.0;
  Recording dc_out = fir_bandpass(dc, 0.1, 75.0);
  double mean = 0.0;
  for (int64_t t = 0; t < dc_out.n_samples(); ++t) mean += dc_out.data.at(0, static_cast<int>(t));
  mean /= static_cast<double>(dc_out.n_samples());
  CHECK(std::abs(mean) <= 42.0 * 0.1);  // >= 20 dB down

  CHECK_THROWS_AS(fir_bandpass(rec, 75.0, 0.1), InputError);
  CHECK_THROWS_AS(fir_bandpass(rec, 0.1, 200.0), InputError);
}

TEST_CASE("notch kills 50 Hz, preserves 40 and 10 Hz, zero stays zero") {
  const int64_t m = 250;  // steady state past the startup transient
  Recording fifty = sine_recording(50.0, 250.0, 20.0);
  const int64_t n = fifty.n_samples();
  Recording out = notch_filter(fifty, 50.0);
  CHECK(rms(out, 0, m, n - m) <= 0.03 * rms(fifty, 0, m, n - m));

  Recording forty = sine_recording(40.0, 250.0, 20.0);
  Recording out40 = notch_filter(forty, 50.0);
  CHECK(std::abs(rms(out40, 0, m, n - m) - rms(forty, 0, m, n - m)) / rms(forty, 0, m, n - m) <=
        0.05);

  Recording ten = sine_recording(10.0, 250.0, 20.0);
  Recording out10 = notch_filter(ten, 50.0);
  CHECK(std::abs(rms(out10, 0, m, n - m) - rms(ten, 0, m, n - m)) / rms(ten, 0, m, n - m) <= 0.05);

  Recording zero = sine_recording(10.0, 250.0, 5.0);
  for (int64_t i = 0; i < zero.data.numel(); ++i) zero.data[i] = 0.0;
  Recording outz = notch_filter(zero, 50.0);
  for (int64_t i = 0; i < outz.data.numel(); ++i) CHECK(outz.data[i] == 0.0);

  CHECK_THROWS_AS(notch_filter(fifty, 140.0), InputError);
}

TEST_CASE("resample length, identity, analytic sine, event rescale") {
  Recording rec = sine_recording(5.0, 160.0, 4.0);
  rec.events.push_back({320, "cue"});  // t = 2 s
  CHECK(rec.n_samples() == 640);
  Recording out = resample(rec, 200.0);
  CHECK(out.n_samples() == 800);
  CHECK(out.sample_rate == 200.0);
  CHECK(out.events[0].sample == 400);

  Recording same = resample(rec, 160.0);
  CHECK(same.data.vec() == rec.data.vec());

  std::vector<double> got, want;
  for (int64_t t = 0; t < out.n_samples(); ++t) {
    got.push_back(out.data.at(0, static_cast<int>(t)));
    want.push_back(std::sin(2.0 * kPi * 5.0 * static_cast<double>(t) / 200.0));
  }
  CHECK(pearson(got, want) > 0.999);
}

TEST_CASE("average re-reference") {
  Recording rec = sine_recording(7.0, 200.0, 2.0, 4);
  Recording same = rec;
  for (int c = 1; c < 4; ++c)
    for (int64_t t = 0; t < same.n_samples(); ++t)
      same.data.at(c, static_cast<int>(t)) = same.data.at(0, static_cast<int>(t));
  Recording z = average_rereference(same);
  for (int64_t i = 0; i < z.data.numel(); ++i) CHECK(std::abs(z.data[i]) <= 1e-12);

  Recording out = average_rereference(rec);
  for (int64_t t = 0; t < out.n_samples(); ++t) {
    double col = 0.0;
    for (int c = 0; c < 4; ++c) col += out.data.at(c, static_cast<int>(t));
    CHECK(std::abs(col) <= 1e-9);
  }
  Recording twice = average_rereference(out);
  for (int64_t i = 0; i < twice.data.numel(); ++i)
    CHECK(twice.data[i] == doctest::Approx(out.data[i]).epsilon(1e-12));
}

TEST_CASE("pipeline applied twice is near-idempotent on clean signals") {
  Recording rec = sine_recording(10.0, 250.0, 30.0, 4, 8.0);
  PreprocessSpec spec;
  Recording once = preprocess(rec, spec);
  Recording twice = preprocess(once, spec);
  const double r1 = rms(once, 1), r2 = rms(twice, 1);
  CHECK(std::abs(r2 - r1) / r1 < 0.01);
}

TEST_CASE("rpeak target fixtures") {
  Recording rec = sine_recording(1.0, 200.0, 2.0);
  auto t = make_rpeak_target(rec, {100});
  for (int64_t i = 0; i < 400; ++i)
    CHECK(t[static_cast<size_t>(i)] == ((i >= 98 && i < 102) ? 1 : 0));

  auto none = make_rpeak_target(rec, {});
  for (int v : none) CHECK(v == 0);

  auto merged = make_rpeak_target(rec, {100, 102});
  int ones = 0, blocks = 0;
  for (int64_t i = 0; i < 400; ++i) {
    ones += merged[static_cast<size_t>(i)];
    if (merged[static_cast<size_t>(i)] == 1 && (i == 0 || merged[static_cast<size_t>(i - 1)] == 0))
      ++blocks;
  }
  CHECK(ones == 6);  // [98,102) union [100,104)
  CHECK(blocks == 1);

  CHECK_THROWS_AS(make_rpeak_target(rec, {500}), InputError);
  CHECK_THROWS_AS(make_rpeak_target(rec, {100, 50}), InputError);
}

TEST_CASE("median binarization uses a strict inequality") {
  CHECK(median_binarize({1, 2, 3, 4, 5}) == std::vector<int>{0, 0, 0, 1, 1});
  CHECK(median_binarize({2, 2, 2, 2}) == std::vector<int>{0, 0, 0, 0});
  CHECK(median_binarize({1, 1, 2, 2}) == std::vector<int>{0, 0, 1, 1});
  CHECK_THROWS_AS(median_binarize({}), InputError);
}

TEST_CASE("rolling windows: counts, overlap, affect labels, short input") {
  Recording rec = sine_recording(3.0, 200.0, 10.0);
  rec.continuous_target = ContinuousTarget{"arousal", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
  WindowedDataset ds = rolling_windows(rec, 4.0, 1.0, WindowLabeling::ContinuousMedian);
  CHECK(ds.n_windows() == 7);
  CHECK(ds.t_in() == 800);
  // median of 0..9 is 4.5; window wi covers up to second wi+3
  for (int wi = 0; wi < 7; ++wi)
    CHECK(ds.window_labels[static_cast<size_t>(wi)] == ((wi + 3) > 4.5 ? 1 : 0));

  for (int c = 0; c < 2; ++c)
    for (int t = 0; t < 600; ++t)
      CHECK(ds.windows.at(0, c, t + 200) == ds.windows.at(1, c, t));

  Recording four = sine_recording(3.0, 200.0, 4.0);
  four.continuous_target = ContinuousTarget{"arousal", {0, 1, 2, 3}};
  CHECK(rolling_windows(four, 4.0, 1.0, WindowLabeling::ContinuousMedian).n_windows() == 1);

  Recording shorty = sine_recording(3.0, 200.0, 2.0);
  WindowedDataset empty = rolling_windows(shorty, 4.0, 1.0, WindowLabeling::None);
  CHECK(empty.n_windows() == 0);
  CHECK(!empty.warning.empty());

  std::vector<int> target(static_cast<size_t>(rec.n_samples()), 0);
  target[350] = 1;
  target[950] = 1;
  WindowedDataset seg = rolling_windows(rec, 4.0, 1.0, WindowLabeling::PerTimestep, &target);
  CHECK(seg.segmentation());
  CHECK(seg.timestep_labels[0][350] == 1);
  CHECK(seg.timestep_labels[1][150] == 1);
  CHECK(seg.timestep_labels[1][750] == 1);
}

TEST_CASE("subject splits are 80:10:10 with a fixed seed") {
  auto s = split_subjects(10, 7);
  int train = 0, val = 0, test = 0;
  for (Split x : s) {
    train += x == Split::Train;
    val += x == Split::Val;
    test += x == Split::Test;
  }
  CHECK(train == 8);
  CHECK(val == 1);
  CHECK(test == 1);
  CHECK(split_subjects(10, 7) == s);
  CHECK_THROWS_AS(split_subjects(2, 0), InputError);
}

TEST_CASE("synth_cfa plants a detectable quasi-periodic artifact") {
  CfaSpec spec;
  spec.seed = 3;
  spec.duration_s = 60.0;
  spec.mean_hr_bpm = 60.0;
  Recording rec = synth_cfa(spec);
  rec.validate();
  CHECK(rec.n_channels() == 8);
  const auto n_peaks = static_cast<int>(rec.events.size());
  CHECK(n_peaks >= 57);
  CHECK(n_peaks <= 63);

  const int planted = rec.montage.index_of("Iz");
  const auto half = static_cast<int64_t>(std::llround(0.01 * spec.sample_rate));
  std::vector<char> in_peak(static_cast<size_t>(rec.n_samples()), 0);
  for (const auto& e : rec.events)
    for (int64_t t = std::max<int64_t>(0, e.sample - half);
         t < std::min<int64_t>(rec.n_samples(), e.sample + half); ++t)
      in_peak[static_cast<size_t>(t)] = 1;
  double peak_sq = 0, rest_sq = 0;
  int64_t peak_n = 0, rest_n = 0;
  for (int64_t t = 0; t < rec.n_samples(); ++t) {
    const double v = rec.data.at(planted, static_cast<int>(t));
    if (in_peak[static_cast<size_t>(t)]) {
      peak_sq += v * v;
      ++peak_n;
    } else {
      rest_sq += v * v;
      ++rest_n;
    }
  }
  CHECK(std::sqrt(peak_sq / peak_n) >= 5.0 * std::sqrt(rest_sq / rest_n));

  Recording again = synth_cfa(spec);
  CHECK(again.data.vec() == rec.data.vec());
  CHECK(again.events.size() == rec.events.size());

  CfaSpec bad = spec;
  bad.planted_channel = "Zz9";
  CHECK_THROWS_AS(synth_cfa(bad), InputError);
}

TEST_CASE("synth_shortcut plants a frontal shortcut a trivial probe can read") {
  ShortcutSpec spec;
  spec.seed = 5;
  spec.n_trials = 40;
  Recording rec = synth_shortcut(spec);
  rec.validate();
  CHECK(static_cast<int>(rec.events.size()) == spec.n_trials);

  WindowedDataset ds = epoch_windows(rec, 4.0, {"left", "right"});
  CHECK(ds.n_windows() == spec.n_trials);
  const int fp1 = rec.montage.index_of("Fp1"), fp2 = rec.montage.index_of("Fp2");
  int correct = 0;
  for (int w = 0; w < ds.n_windows(); ++w) {
    double v1 = 0, v2 = 0;
    for (int t = 0; t < ds.t_in(); ++t) {
      v1 += ds.windows.at(w, fp1, t) * ds.windows.at(w, fp1, t);
      v2 += ds.windows.at(w, fp2, t) * ds.windows.at(w, fp2, t);
    }
    const int pred = v1 > v2 ? 0 : 1;
    correct += pred == ds.window_labels[static_cast<size_t>(w)];
  }
  CHECK(static_cast<double>(correct) / ds.n_windows() >= 0.95);

  ShortcutSpec null_spec = spec;
  null_spec.shortcut_snr = 0.0;
  null_spec.genuine_snr = 0.0;
  null_spec.n_trials = 100;  // pink noise drifts slowly; more trials stabilize the probe
  Recording null_rec = synth_shortcut(null_spec);
  WindowedDataset nds = epoch_windows(null_rec, 4.0, {"left", "right"});
  int ncorrect = 0;
  for (int w = 0; w < nds.n_windows(); ++w) {
    double v1 = 0, v2 = 0;
    for (int t = 0; t < nds.t_in(); ++t) {
      v1 += nds.windows.at(w, fp1, t) * nds.windows.at(w, fp1, t);
      v2 += nds.windows.at(w, fp2, t) * nds.windows.at(w, fp2, t);
    }
    ncorrect += (v1 > v2 ? 0 : 1) == nds.window_labels[static_cast<size_t>(w)];
  }
  const double chance = static_cast<double>(ncorrect) / nds.n_windows();
  CHECK(chance >= 0.3);
  CHECK(chance <= 0.7);

  CHECK(synth_shortcut(spec).data.vec() == rec.data.vec());

  ShortcutSpec overlap = spec;
  overlap.class1_channels = {"Fp1"};
  CHECK_THROWS_AS(synth_shortcut(overlap), InputError);
}

TEST_CASE("synth_affect drives 10 Hz power on driver channels only") {
  AffectSpec spec;
  spec.seed = 11;
  spec.duration_s = 600.0;
  Recording rec = synth_affect(spec);
  rec.validate();
  REQUIRE(rec.continuous_target.has_value());
  CHECK(rec.continuous_target->values.size() == 600);

  const auto& target = rec.continuous_target->values;
  const int driver = rec.montage.index_of("Pz");
  auto env = tone_envelope(rec, driver, 10.0);
  std::vector<double> power(env.size());
  for (size_t i = 0; i < env.size(); ++i) power[i] = env[i] * env[i];
  CHECK(pearson(power, target) >= 0.6);

  const int other = rec.montage.index_of("C3");
  auto env2 = tone_envelope(rec, other, 10.0);
  std::vector<double> power2(env2.size());
  for (size_t i = 0; i < env2.size(); ++i) power2[i] = env2[i] * env2[i];
  CHECK(std::abs(pearson(power2, target)) <= 0.1);

  CHECK(synth_affect(spec).data.vec() == rec.data.vec());
  AffectSpec shorty = spec;
  shorty.duration_s = 4.0;
  CHECK_THROWS_AS(synth_affect(shorty), InputError);
}

TEST_CASE("pink noise is deterministic with unit RMS") {
  Rng a(9), b(9);
  auto n1 = pink_noise(a, 5000);
  auto n2 = pink_noise(b, 5000);
  CHECK(n1 == n2);
  double rms_acc = 0.0;
  for (double v : n1) rms_acc += v * v;
  CHECK(std::sqrt(rms_acc / 5000.0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("recording validation") {
  Recording rec = sine_recording(5.0, 100.0, 2.0);
  rec.events.push_back({5000, "bad"});
  CHECK_THROWS_AS(rec.validate(), ConfigError);
  rec.events.clear();
  rec.continuous_target = ContinuousTarget{"arousal", {1.0}};
  CHECK_THROWS_AS(rec.validate(), ConfigError);
}
