#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace proplab {

// splitmix64 finalizer. Full-avalanche, invertible.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Compile-time tag for naming RNG streams, e.g. stream_tag("score").
constexpr std::uint64_t stream_tag(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

// Small deterministic generator with cheap keyed substreams.
//
// Every consumer derives its stream as Rng::keyed(seed, k1, k2, ...); the
// same key tuple always yields the same draw sequence, independent of how
// work is split across threads. That is what makes reruns byte-identical.
// std::mt19937 + std::normal_distribution would tie the output to one
// stdlib implementation and cost a full state init per substream, so the
// generator is hand-rolled here on purpose.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed) : state_(mix64(seed)) {}

  template <class... Keys>
  static Rng keyed(std::uint64_t seed, Keys... keys) {
    std::uint64_t s = mix64(seed);
    ((s = mix64(s ^ mix64(static_cast<std::uint64_t>(keys)))), ...);
    Rng r;
    r.state_ = s;
    return r;
  }

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1), 53-bit resolution
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n). Lemire multiply-shift; bias is < n / 2^64, irrelevant here.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  // inclusive range
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller. sigma == 0 returns exactly `mean`.
  double normal(double mean = 0.0, double sigma = 1.0) {
    const double u1 = 1.0 - uniform01();  // (0, 1], keeps log() finite
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * (r * std::cos(2.0 * std::numbers::pi * u2));
  }

 private:
  std::uint64_t state_ = 0x9e3779b97f4a7c15ULL;
};

}  // namespace proplab
