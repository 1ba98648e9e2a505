#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>

namespace reid {

/// SplitMix64 (Steele, Lea, Flood 2014). Used to expand a 64-bit seed into
/// generator state; constants 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9,
/// 0x94D049BB133111EB.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();

 private:
  std::uint64_t state_;
};

/// xoshiro256** 1.0 (Blackman, Vigna). State seeded from four SplitMix64 draws.
/// Output sequence is fully specified, so fixtures reproduce in any language.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next(); }

  std::uint64_t next();

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform01();

  /// Uniform integer in [0, bound) by rejection on the low residue; bound > 0.
  std::uint64_t below(std::uint64_t bound);

 private:
  std::uint64_t s_[4];
};

/// Standard normal variates by the Box-Muller transform. Pairs are produced
/// together; the sine branch is cached and returned by the following call.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

  double next();
  Xoshiro256& engine() { return rng_; }

 private:
  Xoshiro256 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace reid
