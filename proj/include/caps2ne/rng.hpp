#pragma once

#include <cstdint>
#include <limits>

namespace caps2ne {

// Stream domains. Every random decision in the toolkit draws from a stream
// keyed by (seed, domain, a, b), so results never depend on scheduling.
enum class RngDomain : std::uint64_t {
  walk = 1,
  target = 2,
  features = 3,
  weights = 4,
  embeddings = 5,
  shuffle = 6,
  negatives = 7,
  inference = 8,
  splits = 9,
  folds = 10,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based generator: output n is mix(key + n * golden). Copyable and
// cheap; the counter is the cursor.
class KeyedRng {
 public:
  using result_type = std::uint64_t;

  constexpr KeyedRng(std::uint64_t seed, RngDomain domain, std::uint64_t a = 0,
                     std::uint64_t b = 0)
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(domain)) ^
                        splitmix64(a + 0x632BE59BD9B4E019ULL) ^ (b * 0xD1B54A32D192ED03ULL + b))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() {
    ++counter_;
    return splitmix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Uniform integer in [0, n), Lemire's multiply-shift with rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Fisher-Yates with KeyedRng so permutations are identical across standard
// library implementations.
template <class Range>
void shuffle(Range& range, KeyedRng& rng) {
  const auto n = static_cast<std::uint64_t>(range.size());
  for (std::uint64_t i = n; i > 1; --i) {
    const std::uint64_t j = rng.uniform_index(i);
    using std::swap;
    swap(range[i - 1], range[j]);
  }
}

}  // namespace caps2ne
