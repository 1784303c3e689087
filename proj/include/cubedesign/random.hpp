#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace cubedesign {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Philox4x32 with ten rounds.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t m0 = 0xD2511F53U, m1 = 0xCD9E8D57U;
  constexpr std::uint32_t w0 = 0x9E3779B9U, w1 = 0xBB67AE85U;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(m0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(m1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    key[0] += w0;
    key[1] += w1;
  }
  return ctr;
}

}  // namespace detail

/// Counter-based random stream. A stream is identified by a 64-bit key; the
/// counter advances with each draw. Child streams are derived from the key
/// and a tag, so the sequence a component sees does not depend on how many
/// numbers other components consumed.
///
/// Distribution helpers are implemented here rather than through <random>
/// so that draws are identical across standard libraries.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed) : RandomStream(seed, 0) {}

  RandomStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), key_(detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(stream_id + 1))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t key() const noexcept { return key_; }

  result_type operator()() {
    if (cached_) {
      cached_ = false;
      return cache_;
    }
    const std::array<std::uint32_t, 4> ctr = {static_cast<std::uint32_t>(counter_),
                                              static_cast<std::uint32_t>(counter_ >> 32), 0U, 0U};
    ++counter_;
    const auto out = detail::philox4x32(ctr, {static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)});
    cache_ = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
    cached_ = true;
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Standard normal via the Box-Muller transform.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n) by Lemire's multiply-and-reject method.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
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

  /// Independent child stream for a named component.
  RandomStream substream(std::string_view tag) const { return substream(detail::hash_tag(tag)); }

  /// Independent child stream for an index, e.g. a replication number.
  RandomStream substream(std::uint64_t index) const {
    RandomStream child(seed_, 0);
    child.key_ = detail::splitmix64(key_ ^ detail::splitmix64(index ^ 0xA0761D6478BD642FULL));
    return child;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::uint64_t cache_ = 0;
  bool cached_ = false;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stream tags used across the library.
namespace streams {
inline constexpr std::string_view design = "design";
inline constexpr std::string_view dgp = "dgp";
inline constexpr std::string_view landing = "landing";
inline constexpr std::string_view inference = "inference";
}  // namespace streams

}  // namespace cubedesign
