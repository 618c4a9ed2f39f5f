#pragma once

#include <span>
#include <string>
#include <vector>

#include "dydiff/rng.hpp"

namespace dydiff {

struct StepResult {
  std::vector<double> next_state;
  double reward = 0.0;
  // True when the episode reaches a terminal state. Time-limit truncation is
  // handled by the episode loop and is not terminal.
  bool done = false;
};

// A continuous-control environment with a deterministic step rule.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  // Actions live in [-action_bound, action_bound] on every dimension.
  virtual double action_bound() const = 0;
  virtual std::size_t horizon() const = 0;
  // |reward| <= reward_bound for every transition.
  virtual double reward_bound() const = 0;

  virtual std::vector<double> initial_state(Rng& rng) const = 0;
  virtual StepResult step(std::span<const double> state, std::span<const double> action) const = 0;
};

struct PointMassConfig {
  double dt = 0.05;
  double max_speed = 1.0;
  double position_limit = 2.0;
  double goal_x = 1.0;
  double goal_y = 1.0;
  double goal_radius = 0.05;
  std::size_t horizon = 200;
  double start_x = -1.5;
  double start_y = -1.5;
  // Half-width of the uniform box around the start position. Zero gives a
  // fixed initial state.
  double start_jitter = 0.0;
};

// 2-D point mass: state (x, y, vx, vy), action (ax, ay) in [-1, 1]^2.
//   v' = clip(v + a dt, -max_speed, max_speed)
//   p' = clip(p + v' dt, -position_limit, position_limit)
//   r  = -|p' - goal|,  done when |p' - goal| <= goal_radius.
class PointMass final : public Environment {
 public:
  explicit PointMass(PointMassConfig cfg = {});

  std::string name() const override { return "pointmass"; }
  std::size_t state_dim() const override { return 4; }
  std::size_t action_dim() const override { return 2; }
  double action_bound() const override { return 1.0; }
  std::size_t horizon() const override { return cfg_.horizon; }
  double reward_bound() const override;

  std::vector<double> initial_state(Rng& rng) const override;
  StepResult step(std::span<const double> state, std::span<const double> action) const override;

  const PointMassConfig& config() const { return cfg_; }

 private:
  PointMassConfig cfg_;
};

// Goal-seeking proportional-derivative controller used as the behavior
// policy: a = clip(kp (goal - p) - kd v + noise * N(0, I), -1, 1).
struct GoalSeekingController {
  double kp = 1.0;
  double kd = 1.6;
  double goal_x = 1.0;
  double goal_y = 1.0;

  std::vector<double> act(std::span<const double> state, double noise, Rng& rng) const;
};

}  // namespace dydiff
