#ifndef LATNET_RNG_HPP
#define LATNET_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace latnet {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a top-level seed. Every stage of
/// a run (simulation, anchors, each chain, clustering) draws its seed this
/// way, so any stage can be rerun in isolation with a reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0xD1B54A32D192ED03ull));
}

/// Random stream with a std::mt19937_64 core and hand-rolled distribution
/// transforms. The standard specifies the engine output exactly but leaves
/// distribution algorithms implementation-defined; rolling the transforms
/// here keeps output byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased via rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t threshold = (-n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t x = next();
      if (x >= threshold) return x % n;
    }
  }

  /// Standard normal via the Marsaglia polar method (one spare cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace latnet

#endif  // LATNET_RNG_HPP
