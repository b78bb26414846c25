#pragma once

// Counter-based pseudo-random generator.
//
// Every draw is a pure function of (seed, stream, counter): the generator
// keeps no hidden state beyond the counter, so identical (seed, stream,
// counter) triples produce bit-identical values on every platform.  Streams
// let independent consumers (init, data shuffling, sampling, ...) share one
// experiment seed without coupling their draw sequences.
//
// Algorithm ("mix64-counter"): the SplitMix64 finalizer applied to a keyed
// Weyl sequence,
//   key    = mix64(seed ^ mix64(stream ^ 0x9e3779b97f4a7c15))
//   out_i  = mix64(key + i * 0x9e3779b97f4a7c15)
// where mix64 is the xor-shift/multiply finalizer from SplitMix64.

#include <cmath>
#include <cstdint>
#include <vector>

namespace mint {

namespace detail {
inline constexpr std::uint64_t kWeyl = 0x9e3779b97f4a7c15ull;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}
}  // namespace detail

class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream), counter_(counter),
        key_(detail::mix64(seed ^ detail::mix64(stream ^ detail::kWeyl))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  /// Same seed, independent stream, counter reset to zero.
  Rng fork(std::uint64_t stream) const { return Rng(seed_, stream, 0); }

  std::uint64_t next_u64() { return detail::mix64(key_ + (counter_++) * detail::kWeyl); }

  /// Uniform in [0, 1) with 24 bits of mantissa (exactly representable in f32).
  float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (one value per two uniform draws).
  float normal() {
    float u1 = uniform();
    float u2 = uniform();
    if (u1 < 1e-12f) u1 = 1e-12f;
    double r = std::sqrt(-2.0 * std::log(static_cast<double>(u1)));
    return static_cast<float>(r * std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(u2)));
  }

  float normal(float mean, float std) { return mean + std * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t key_ = detail::mix64(detail::mix64(detail::kWeyl));
};

/// Stream ids used across the library, so experiments never reuse a stream by
/// accident.
enum class RngStream : std::uint64_t {
  kParamInit = 1,
  kDataSplit = 2,
  kShuffle = 3,
  kSampling = 4,
  kProbe = 5,
  kAnalysis = 6,
};

inline Rng make_rng(std::uint64_t seed, RngStream stream, std::uint64_t counter = 0) {
  return Rng(seed, static_cast<std::uint64_t>(stream), counter);
}

}  // namespace mint
