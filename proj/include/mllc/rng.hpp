#pragma once

#include <cstdint>
#include <random>

namespace mllc {

// Deterministic random stream. mt19937_64 output is pinned by the C++
// standard, and all distributions below are derived from raw draws rather
// than std:: distributions (whose algorithms are implementation-defined),
// so identical seeds give identical streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller on two uniform draws.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent child stream; forking never disturbs this stream's state.
  Rng fork(std::uint64_t stream) const;

  /// Stateless seed derivation for purpose-keyed streams.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace mllc
