#pragma once

#include <cstdint>
#include <random>

namespace editlab {

// Portable Gaussian source. std::mt19937_64 is bit-specified by the
// standard, but std::normal_distribution is not, so the normal variates are
// produced here with Box-Muller on 53-bit uniforms. Same seed, same stream,
// on every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double normal();

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace editlab
