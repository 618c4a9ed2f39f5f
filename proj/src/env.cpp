#include "dydiff/env.hpp"

#include <algorithm>
#include <cmath>

#include "dydiff/error.hpp"
#include "dydiff/matrix.hpp"

namespace dydiff {

PointMass::PointMass(PointMassConfig cfg) : cfg_(cfg) {
  if (!(cfg_.dt > 0.0) || !(cfg_.max_speed > 0.0) || !(cfg_.position_limit > 0.0))
    throw ConfigError("PointMass: dt, max_speed and position_limit must be positive");
  if (cfg_.horizon == 0) throw ConfigError("PointMass: horizon must be >= 1");
}

double PointMass::reward_bound() const {
  // Farthest clipped position from the goal.
  const double dx = cfg_.position_limit + std::abs(cfg_.goal_x);
  const double dy = cfg_.position_limit + std::abs(cfg_.goal_y);
  return std::hypot(dx, dy);
}

std::vector<double> PointMass::initial_state(Rng& rng) const {
  double x = cfg_.start_x;
  double y = cfg_.start_y;
  if (cfg_.start_jitter > 0.0) {
    x += rng.uniform(-cfg_.start_jitter, cfg_.start_jitter);
    y += rng.uniform(-cfg_.start_jitter, cfg_.start_jitter);
  }
  return {x, y, 0.0, 0.0};
}

StepResult PointMass::step(std::span<const double> state, std::span<const double> action) const {
  if (state.size() != 4 || action.size() != 2) throw DimensionError("PointMass::step: bad dims");
  if (!all_finite(state)) throw NumericError("PointMass::step: non-finite state");
  if (!all_finite(action)) throw NumericError("PointMass::step: non-finite action");
  const double lim = cfg_.position_limit;
  const double ax = std::clamp(action[0], -1.0, 1.0);
  const double ay = std::clamp(action[1], -1.0, 1.0);
  const double vx = std::clamp(state[2] + ax * cfg_.dt, -cfg_.max_speed, cfg_.max_speed);
  const double vy = std::clamp(state[3] + ay * cfg_.dt, -cfg_.max_speed, cfg_.max_speed);
  const double px = std::clamp(state[0] + vx * cfg_.dt, -lim, lim);
  const double py = std::clamp(state[1] + vy * cfg_.dt, -lim, lim);
  const double dist = std::hypot(px - cfg_.goal_x, py - cfg_.goal_y);
  return {{px, py, vx, vy}, -dist, dist <= cfg_.goal_radius};
}

std::vector<double> GoalSeekingController::act(std::span<const double> state, double noise,
                                               Rng& rng) const {
  std::vector<double> a(2);
  const double goal[2] = {goal_x, goal_y};
  for (std::size_t d = 0; d < 2; ++d) {
    double u = kp * (goal[d] - state[d]) - kd * state[d + 2];
    if (noise > 0.0) u += noise * rng.normal();
    a[d] = std::clamp(u, -1.0, 1.0);
  }
  return a;
}

}  // namespace dydiff
