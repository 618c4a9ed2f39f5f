#include <cmath>

#include "doctest.h"
#include "dydiff/env.hpp"
#include "dydiff/error.hpp"
#include "dydiff/theory_lab.hpp"

using namespace dydiff;

namespace {

// True point-mass step with a constant push on the velocity.
class BiasedModel final : public TransitionModel {
 public:
  BiasedModel(const PointMass& env, double bias) : truth_(env), bias_(bias) {}
  Matrix predict_next(ConstMatrixRef s, ConstMatrixRef a) const override {
    Matrix out = truth_.predict_next(s, a);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      out(r, 2) += bias_;
      out(r, 3) -= 0.5 * bias_;
    }
    return out;
  }

 private:
  EnvTransition truth_;
  double bias_;
};

FunctionPolicy controller_policy() {
  return FunctionPolicy(2, [](std::span<const double> s) {
    Rng unused(0);
    return GoalSeekingController{}.act(s, 0.0, unused);
  });
}

Normalizer identity_normalizer() {
  Normalizer n;
  n.defined = true;
  n.state_mean.assign(4, 0.0);
  n.state_std.assign(4, 1.0);
  n.action_mean.assign(2, 0.0);
  n.action_std.assign(2, 1.0);
  return n;
}

Matrix random_starts(std::size_t n, Rng& rng, double lo = -1.5, double hi = 0.5) {
  Matrix s(n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    s(i, 0) = rng.uniform(lo, hi);
    s(i, 1) = rng.uniform(lo, hi);
  }
  return s;
}

}  // namespace

TEST_SUITE("theory_lab") {

TEST_CASE("mse curve with the true dynamics as model") {
  PointMass env;
  EnvTransition perfect(env);
  auto pi = controller_policy();
  Rng rng(1);
  Matrix starts = random_starts(20, rng);
  auto rows = rollout_mse_curve(env, perfect, nullptr, pi, {1, 10, 50}, starts, 0);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.mse_autoregressive == 0.0);
    CHECK(std::isnan(r.mse_diffusion));
  }
}

TEST_CASE("mse curve at h=1 is the one-step error") {
  PointMass env;
  BiasedModel model(env, 0.01);
  auto pi = controller_policy();
  Rng rng(2);
  Matrix starts = random_starts(10, rng);
  auto rows = rollout_mse_curve(env, model, nullptr, pi, {1}, starts, 0);
  // Velocities stay well under the clip, so the error is exactly the bias.
  CHECK(rows[0].mse_autoregressive == doctest::Approx((0.01 * 0.01 + 0.005 * 0.005) / 4.0).epsilon(1e-9));
}

TEST_CASE("autoregressive error grows with the horizon") {
  PointMass env;
  BiasedModel model(env, 0.004);
  auto pi = controller_policy();
  Rng rng(3);
  const std::size_t n = 100;
  // Starts near enough to the goal that the speed clip never engages; the
  // clip would otherwise erase velocity error.
  Matrix starts = random_starts(n, rng, -0.2, 0.6);
  const std::vector<std::size_t> hs{1, 2, 5, 10, 20, 40};
  std::size_t monotone = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto rows = rollout_mse_curve(env, model, nullptr, pi, hs, ConstMatrixRef{starts.row(i).data(), 1, 4}, 0);
    bool ok = true;
    for (std::size_t k = 1; k < rows.size(); ++k) ok = ok && rows[k].mse_autoregressive >= rows[k - 1].mse_autoregressive;
    monotone += ok ? 1 : 0;
  }
  CHECK(monotone >= 95);
}

TEST_CASE("diffusion column with an oracle denoiser") {
  PointMass env;
  EnvTransition perfect(env);
  auto pi = controller_policy();
  Matrix start{{-1.0, -0.5, 0.0, 0.0}};
  const std::size_t L = 8;
  Trajectory truth = autoregressive_rollout(perfect, pi, start.row(0), L);
  TrajectoryLayout layout{L, 4, 2};
  Matrix point(1, layout.width());
  for (std::size_t i = 0; i <= L; ++i)
    for (std::size_t d = 0; d < 4; ++d) point(0, layout.state_index(i, d)) = truth.states(i, d);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t d = 0; d < 2; ++d) point(0, layout.action_index(i, d)) = truth.actions(i, d);
  AnalyticDenoiser oracle(point);
  DiffusionSampler ds{&oracle, layout, identity_normalizer(), NoiseSchedule{}, SamplerConfig{}};

  auto rows = rollout_mse_curve(env, perfect, &ds, pi, {1, 4, 8}, start, 9);
  for (const auto& r : rows) CHECK(r.mse_diffusion < 1e-6);

  CHECK_THROWS_AS(rollout_mse_curve(env, perfect, &ds, pi, {9}, start, 9), ConfigError);
  CHECK(mse_csv(rows, 1, 9).rfind("horizon,mse_autoregressive,mse_diffusion,n_starts,seed\n1,0,", 0) == 0);
}

}  // TEST_SUITE
