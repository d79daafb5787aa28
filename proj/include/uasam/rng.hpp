#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace uasam {

/// xoshiro256** seeded through splitmix64. Satisfies UniformRandomBitGenerator
/// so it plugs into <random>, but the draws used by the library go through the
/// member helpers, which are bit-reproducible across standard libraries.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);
  /// Independent stream derived from (seed, stream index).
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal (Box-Muller, one draw cached).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::array<std::uint64_t, 4> state() const { return s_; }

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace uasam
