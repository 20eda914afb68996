#pragma once

#include <cstdint>
#include <random>

namespace veritas::nn {

/// Serializable position of an Rng: replaying `position` raw draws from `seed`
/// reproduces the generator exactly.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t position = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

/// Seeded 64-bit generator. Uniform and normal variates are derived from raw
/// engine output by fixed formulas so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  explicit Rng(const RngState& state);

  /// Independent stream for (seed, index). Used for per-sample and per-fold streams
  /// so parallel schedules do not change results.
  static Rng derive(std::uint64_t seed, std::uint64_t index);
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Standard normal via Box-Muller. Only the cosine half is used so that
  /// RngState always captures the full generator state.
  double normal();
  /// True with probability p.
  bool bernoulli(double p);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  RngState state() const noexcept { return {seed_, position_}; }

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
  std::mt19937_64 engine_;
};

/// Fisher-Yates shuffle driven by Rng::below.
template <typename Range>
void shuffle(Range& r, Rng& rng) {
  using std::swap;
  const auto n = static_cast<std::uint64_t>(std::size(r));
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = rng.below(i);
    swap(r[i - 1], r[j]);
  }
}

}  // namespace veritas::nn
