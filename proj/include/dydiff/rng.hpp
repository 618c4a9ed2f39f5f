#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace dydiff {

std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent stream seed from a master seed and a path of
// indices, e.g. derive_seed(seed, {epoch, trajectory}). Every module uses this
// so that results never depend on evaluation order or thread count.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, std::initializer_list<std::uint64_t> path)
      : engine_(derive_seed(master, path)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Fisher-Yates shuffle driven by rng.
void shuffle_indices(std::vector<std::size_t>& v, Rng& rng);

}  // namespace dydiff
