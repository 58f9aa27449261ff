// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

#include "genemu/errors.hpp"

namespace genemu {

namespace detail {

// SplitMix64 finalizer. Used to turn (seed, stream) pairs into well mixed
// engine seeds so forked streams do not correlate with the parent.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Deterministic random source. All distributions are implemented on top of
/// the raw 64-bit stream, so identical seeds give identical draws on every
/// platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : seed_(seed), engine_(detail::mix64(detail::mix64(seed))) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in (0, 1]; safe as a log() argument.
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Standard Box-Muller without caching the second variate, so the number
  /// of raw draws per call is fixed and replay stays aligned.
  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw InvalidArgument("bernoulli probability must lie in [0, 1]");
    }
    return uniform() < p;
  }

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("uniform_int bound must be positive");
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Derive an independent child stream. Forking is a pure function of
  /// (seed, tag): it does not consume state from this generator.
  Rng fork(std::uint64_t tag) const {
    return Rng(detail::mix64(seed_ ^ detail::mix64(tag + 0x632be59bd9b4e019ULL)));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace genemu
