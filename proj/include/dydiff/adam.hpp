#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dydiff {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg) : config(cfg), first_moment(n, 0.0), second_moment(n, 0.0) {}

  AdamConfig config;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;
};

// Bias-corrected Adam update, in place. Throws NumericError if any gradient is
// non-finite (state and parameters are left untouched in that case).
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

}  // namespace dydiff
