#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace uda {

/// Stable sub-seed for (root, purpose): splitmix64 over FNV-1a of the purpose.
uint64_t derive_seed(uint64_t root, std::string_view purpose);
uint64_t derive_seed(uint64_t root, std::string_view purpose, uint64_t index);

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  int64_t uniform_int(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace uda
