#pragma once

#include <cstdint>
#include <random>

namespace attnlab {

// SplitMix64 finalizer; used to derive child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Seedable generator. Children derived with split() depend only on the
// parent seed and the stream id, never on how many draws the parent made.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng split(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }
  std::uint64_t seed() const { return seed_; }

  double normal();
  double uniform();
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace attnlab
