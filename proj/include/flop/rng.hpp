#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace flop {

/// Seeded random stream with a platform-independent uniform/normal mapping
/// and a serializable state (no cached values between draws).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform in (0, 1).
  double open_uniform();
  /// Standard normal via Box-Muller (one value per call, nothing cached).
  double normal();
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace flop
