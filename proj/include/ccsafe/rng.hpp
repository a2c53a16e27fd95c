#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ccsafe {

/// Seeded 64-bit stream. Children from `split` are independent streams
/// derived by hashing (seed, index), so they are stable under reordering.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  Rng split(std::uint64_t index) const;

  result_type operator()() { return engine_(); }
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }

  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal(double mean = 0.0, double stddev = 1.0);
  std::size_t index(std::size_t n);        // [0, n)
  bool bernoulli(double p);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

Rng seeded_rng(std::uint64_t seed);

}  // namespace ccsafe
