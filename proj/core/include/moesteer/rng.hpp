#pragma once

#include <cstdint>

namespace moesteer {

// SplitMix64 (Sebastiano Vigna, public domain reference implementation).
// All simulator parameters and seeded draws in this toolkit come from this
// generator so that traces are reproducible across platforms and standard
// libraries. The update and output constants below are the fixed, documented
// algorithm; see README for the parameter derivation order.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_double(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform in [0, n). Modulo reduction; the bias is below 2^-50 for the
  // small n used here.
  std::uint64_t next_below(std::uint64_t n) { return next() % n; }

 private:
  std::uint64_t state_;
};

// Derives an independent seed stream from (seed, tag). Used to keep e.g.
// the sweep's random control arm from perturbing main-arm determinism.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  SplitMix64 g(seed);
  SplitMix64 h(g.next() ^ (tag * 0x9e3779b97f4a7c15ULL + 1));
  return h.next();
}

}  // namespace moesteer
