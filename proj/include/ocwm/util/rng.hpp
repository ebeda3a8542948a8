#pragma once

#include <cmath>
#include <cstdint>

namespace ocwm::util {

// Counter-free splitmix64 generator. std::mt19937 is portable but the
// standard distributions are not; all sampling code below is explicit so a
// seed yields the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller; one value per call, the twin is discarded to keep the
  // stream position independent of call parity.
  double normal() {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Child stream decorrelated from this one; does not advance the parent.
  Rng fork(std::uint64_t salt) const {
    Rng child(state_ ^ (0x9e3779b97f4a7c15ull * (salt + 1)));
    child.next_u64();
    return child;
  }

 private:
  std::uint64_t state_;
};

// FNV-1a, used for config fingerprints.
inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace ocwm::util
