#pragma once

#include <array>
#include <cstdint>

namespace hc {

// Deterministic, serializable PRNG (xoshiro256** seeded via splitmix64).
// Distributions are implemented here rather than taken from <random> so
// that streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal via Box-Muller (second draw cached).
  double normal();
  double normal(double mean, double stddev);

  // Normal(mean, stddev) resampled until within +/- trunc_sigmas.
  double truncated_normal(double mean, double stddev, double trunc_sigmas = 2.0);

  // Full generator state, for checkpointing.
  struct State {
    std::array<std::uint64_t, 4> s;
    bool has_cached_normal;
    double cached_normal;
  };
  State state() const;
  void set_state(const State& st);

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_cached_normal_{false};
  double cached_normal_{0.0};
};

}  // namespace hc
