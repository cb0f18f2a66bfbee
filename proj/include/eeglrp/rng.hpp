#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace eeglrp {

/// Seeded generator with hand-rolled distributions so that streams are
/// byte-stable across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t raw() { return eng_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cached spare).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.28318530717958647692 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double sd) { return mean + sd * gaussian(); }

  /// Normal truncated to +-2 sd (resampling).
  double trunc_gaussian(double sd) {
    double z = gaussian();
    while (std::abs(z) > 2.0) z = gaussian();
    return z * sd;
  }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(eng_() % static_cast<uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct indices drawn from [0, n) without replacement.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline std::vector<int> Rng::sample_without_replacement(int n, int k) {
  std::vector<int> pool(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
  shuffle(pool);
  pool.resize(static_cast<size_t>(k < n ? k : n));
  return pool;
}

}  // namespace eeglrp
