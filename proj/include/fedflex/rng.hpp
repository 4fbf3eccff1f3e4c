#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace fedflex {

/// Deterministic counter-free PRNG built on SplitMix64.
///
/// Streams are identified by a 64-bit key. Substreams are derived from the
/// key (never from the evolving state), so a stream for (seed, round, client)
/// is independent of how many draws any other stream has made. That keeps
/// simulations reproducible when clients are evaluated concurrently or in a
/// different order.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed) : state_(mix(seed ^ kInitSalt)), key_(state_) {}

  /// Derive an independent substream from this stream's key and a tag.
  RngStream child(std::uint64_t tag) const {
    RngStream s;
    s.state_ = mix(key_ + 0x632be59bd9b4e019ULL * (tag + 1));
    s.key_ = s.state_;
    return s;
  }
  RngStream child(std::uint64_t a, std::uint64_t b) const {
    return child(mix(a + 0x9e3779b97f4a7c15ULL * (b + 1)));
  }
  RngStream child(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    return child(a).child(mix(b + 0xbf58476d1ce4e5b9ULL * (c + 1)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Modulo bias is < 2^-40 for n < 2^24; acceptable for simulation work.
    return next_u64() % n;
  }

  /// Standard normal via Box-Muller.
  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= std::numeric_limits<double>::min()) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double stdev) { return mean + stdev * gaussian(); }

 private:
  static constexpr std::uint64_t kInitSalt = 0x8f1bbcdcbfa53e0bULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  std::uint64_t key_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace fedflex
