#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace duplex {

// Deterministic random source used everywhere in the project. All sampling
// goes through explicit methods instead of std::*_distribution so that a
// given seed produces the same stream on every platform and toolchain.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  uint64_t uniform_int(uint64_t n);

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller (no cached spare, so the stream is a pure
  // function of the call sequence).
  double gaussian();

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Child generator whose seed mixes this seed with a tag; lets independent
  // subsystems draw from unrelated streams.
  Rng fork(std::string_view tag) const;

  uint64_t seed() const { return seed_of_construction_; }

 private:
  std::mt19937_64 gen_;
  uint64_t seed_of_construction_ = 0;

 public:
  static Rng with_seed(uint64_t seed) {
    Rng r(seed);
    r.seed_of_construction_ = seed;
    return r;
  }
};

// 64-bit FNV-1a. Used for config/content hashing and seed derivation.
uint64_t fnv1a64(std::string_view bytes, uint64_t basis = 1469598103934665603ull);

// Deterministic seed for (base seed, tag, index) triples, e.g. per-step RNGs.
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index = 0);

}  // namespace duplex
