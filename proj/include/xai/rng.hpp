#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace xai {

/// Seedable random stream. Every component (data, model, explainer, attack)
/// derives its own named stream from the master seed so that experiments are
/// reproducible regardless of call order. Distributions are generated
/// explicitly (not via std::*_distribution) so sequences are identical on
/// every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed), base_seed_(seed) {}

  /// Derive a stream from a master seed and a stream name (FNV-1a mix).
  static Rng derive(std::uint64_t master, std::string_view stream) {
    std::uint64_t h = 14695981039346656037ull;
    for (char c : stream) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 1099511628211ull;
    }
    return Rng(mix(master ^ h));
  }

  /// Derive an indexed substream, e.g. one per panel instance or worker.
  Rng spawn(std::uint64_t index) const {
    return Rng(mix(base_seed_ ^ mix(index + 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0,1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(eng_() % span);
  }

  /// Standard normal via Box-Muller (second value discarded for a fixed
  /// consumption pattern).
  double normal() {
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Sample an index from nonnegative weights (must not all be zero).
  std::size_t weighted_index(const std::vector<double>& w);

 private:
  explicit Rng(std::uint64_t seed, int) : eng_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {  // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::mt19937_64 eng_;
  std::uint64_t base_seed_ = 0;
};

inline std::size_t Rng::weighted_index(const std::vector<double>& w) {
  double total = 0.0;
  for (double x : w) total += x;
  double r = uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    r -= w[i];
    if (r <= 0.0) return i;
  }
  return w.size() - 1;
}

}  // namespace xai
