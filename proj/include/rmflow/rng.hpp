#pragma once

#include <cstdint>

namespace rmflow {

/// Counter-based generator (Philox4x32-10). The output at a given position is a
/// pure function of (seed, stream, counter), so streams can be split and
/// resumed without replaying history.
class Rng {
 public:
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;
    bool operator==(const State&) const = default;
  };

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
      : state_{seed, stream, 0} {}
  explicit Rng(const State& state) noexcept : state_(state) {}

  /// Independent child stream; does not advance this generator.
  [[nodiscard]] Rng split(std::uint64_t id) const noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Standard normal via Box-Muller (one value per two uniforms).
  double normal() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  [[nodiscard]] const State& state() const noexcept { return state_; }

 private:
  State state_;
};

}  // namespace rmflow
