#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace latentaug {

// All randomness in the library goes through this wrapper. The standard
// distributions are implementation-defined, so uniform/normal mapping is
// done here to keep runs bit-reproducible across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range. Modulo bias is below 2^-53 for the ranges used
  // here and the mapping is fully deterministic.
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Standard normal via Box-Muller. Consumes two uniforms per draw; no
  // cached spare, so the stream position is a pure function of call count.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream keyed by label. Advances the parent by one
  // draw, so fork order matters and is part of the reproducibility contract.
  Rng fork(std::string_view label);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (int64_t i = static_cast<int64_t>(items.size()) - 1; i > 0; --i) {
      std::swap(items[static_cast<size_t>(i)], items[static_cast<size_t>(uniform_int(0, i))]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Deterministic sub-seed from a master seed and a stream name. Distinct
// names map to distinct seeds with overwhelming probability; callers that
// care (seed bookkeeping in the CLI) verify the set they use is collision
// free.
uint64_t derive_seed(uint64_t master, std::string_view name);

}  // namespace latentaug
