#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

// Counter-based random numbers. Every draw is a pure function of a 64-bit key
// and a 64-bit counter, so results do not depend on evaluation order.
//
// Key derivation: a subsystem key is derive_key(root_seed, "label"), i.e.
// mix64(root_seed ^ fnv1a64("label")). Nested keys apply derive_key again or
// combine with an integer through derive_key(key, index).

namespace cmir::rng {

constexpr std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_key(std::uint64_t root, std::string_view label) {
  return mix64(root ^ fnv1a64(label));
}

constexpr std::uint64_t derive_key(std::uint64_t root, std::uint64_t index) {
  return mix64(mix64(root) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Uniform in the open interval (0, 1).
inline double uniform(std::uint64_t key, std::uint64_t counter) {
  const std::uint64_t bits = mix64(key ^ mix64(counter));
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on counters (2i, 2i+1).
inline double normal(std::uint64_t key, std::uint64_t index) {
  const double u1 = uniform(key, 2 * index);
  const double u2 = uniform(key, 2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Laplace with location 0 and unit scale.
inline double laplace(std::uint64_t key, std::uint64_t index) {
  const double u = uniform(key, index) - 0.5;
  return u < 0 ? std::log1p(2.0 * u) : -std::log1p(-2.0 * u);
}

/// Sequential view over a counter stream.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}

  double uniform() { return rng::uniform(key_, counter_++); }
  double normal() { return rng::normal(key_, counter_++); }
  double laplace() { return rng::laplace(key_, counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace cmir::rng
