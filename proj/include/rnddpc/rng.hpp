#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rnddpc {

/// FNV-1a hash, also used to derive substream seeds and to fingerprint artifacts.
std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t h = 1469598103934665603ULL);
std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL);

/// Seed of a named substream derived from one master seed. Stages (collect,
/// train, run, ...) each draw from their own substream so they can be re-run
/// independently without perturbing each other.
std::uint64_t substream_seed(std::uint64_t master, std::string_view name);

/// Seeded random source for one substream. Not thread-safe; use one per rollout.
class Rng {
 public:
  Rng(std::uint64_t master, std::string_view substream)
      : eng_(substream_seed(master, substream)) {}
  explicit Rng(std::uint64_t raw_seed) : eng_(raw_seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(eng_);
  }
  /// Uniform integer in [lo, hi], both inclusive.
  int uniform_int(int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(eng_);
  }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace rnddpc
