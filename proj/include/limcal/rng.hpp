#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace limcal {

// xoshiro256** seeded through splitmix64. Every random draw in the project
// (initialization, data generation, shuffling, drop masks, substitutes)
// flows through this generator so runs are reproducible from a single u64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n), n > 0; unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; the spare variate is cached.
  double normal();
  double normal(double mean, double stddev);
  bool bernoulli(double p);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent child stream; deterministic function of this stream's state.
  Rng fork();

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace limcal
