#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

namespace tripcast {

/// Counter-based Philox4x32-10 generator.
///
/// A generator is identified by (seed, stream); the block counter advances
/// as values are drawn. `fork(tag)` derives an independent stream, which is
/// how per-stay and per-path randomness is made order independent.
class Rng {
 public:
  using result_type = std::uint32_t;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;
  std::uint64_t next_u64() noexcept;

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept;

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  Rng fork(std::uint64_t tag) const noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

namespace detail {
/// The raw ten-round Philox4x32 bijection.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key) noexcept;
}  // namespace detail

/// One round of SplitMix64; used to mix seeds and tags.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// 64-bit FNV-1a hash of a byte string.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace tripcast
