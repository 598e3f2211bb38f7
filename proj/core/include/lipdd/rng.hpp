#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace lipdd {

/// xoshiro256** seeded through splitmix64. Every distribution below is
/// implemented here from integer draws, so a seed yields the same stream on
/// every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal (Marsaglia polar method, spare value cached).
  double normal();

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derives an independent 64-bit seed for a named sub-stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace lipdd
