#pragma once

#include <cstdint>
#include <vector>

#include "dydiff/adam.hpp"
#include "dydiff/dataset.hpp"
#include "dydiff/env.hpp"
#include "dydiff/mlp.hpp"
#include "json.hpp"

namespace dydiff {

// Batched single-step transition s' = T(s, a), raw units.
class TransitionModel {
 public:
  virtual ~TransitionModel() = default;
  virtual Matrix predict_next(ConstMatrixRef states, ConstMatrixRef actions) const = 0;
};

// Batched reward r(s, a), raw units.
class RewardFunction {
 public:
  virtual ~RewardFunction() = default;
  virtual std::vector<double> reward(ConstMatrixRef states, ConstMatrixRef actions) const = 0;
};

// Adapters exposing an environment's true step rule.
class EnvTransition final : public TransitionModel {
 public:
  explicit EnvTransition(const Environment& env) : env_(env) {}
  Matrix predict_next(ConstMatrixRef states, ConstMatrixRef actions) const override;

 private:
  const Environment& env_;
};

class EnvReward final : public RewardFunction {
 public:
  explicit EnvReward(const Environment& env) : env_(env) {}
  std::vector<double> reward(ConstMatrixRef states, ConstMatrixRef actions) const override;

 private:
  const Environment& env_;
};

struct RegressionConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{128, 128};
  AdamConfig adam{};
  double holdout_fraction = 0.1;
};

struct FitReport {
  // Per-element mean squared error in normalized target units.
  double train_mse = 0.0;
  // NaN when the holdout split is empty.
  double holdout_mse = 0.0;
  std::size_t train_size = 0;
  std::size_t holdout_size = 0;
};

// Minibatch MSE regression of `mlp` on (inputs, targets). A holdout_fraction
// share of rows, chosen by a seeded shuffle, is excluded from training and
// used for the reported holdout error.
FitReport fit_regression(Mlp& mlp, const Matrix& inputs, const Matrix& targets,
                         const RegressionConfig& cfg);

// Predicts the normalized state delta (s' - s) from normalized (s, a).
class DynamicsModel final : public TransitionModel {
 public:
  DynamicsModel() = default;
  DynamicsModel(Mlp mlp, Normalizer normalizer, std::vector<double> delta_mean,
                std::vector<double> delta_std);

  Matrix predict_next(ConstMatrixRef states, ConstMatrixRef actions) const override;

  const Mlp& mlp() const { return mlp_; }
  Mlp& mlp() { return mlp_; }
  const Normalizer& normalizer() const { return normalizer_; }
  const std::vector<double>& delta_mean() const { return delta_mean_; }
  const std::vector<double>& delta_std() const { return delta_std_; }

 private:
  Mlp mlp_;
  Normalizer normalizer_;
  std::vector<double> delta_mean_, delta_std_;
};

class RewardModel final : public RewardFunction {
 public:
  RewardModel() = default;
  RewardModel(Mlp mlp, Normalizer normalizer);

  std::vector<double> reward(ConstMatrixRef states, ConstMatrixRef actions) const override;

  const Mlp& mlp() const { return mlp_; }
  Mlp& mlp() { return mlp_; }
  const Normalizer& normalizer() const { return normalizer_; }

 private:
  Mlp mlp_;
  Normalizer normalizer_;
};

struct DynamicsFit {
  DynamicsModel model;
  FitReport report;
};

struct RewardFit {
  RewardModel model;
  FitReport report;
};

DynamicsFit train_dynamics(const Dataset& ds, const RegressionConfig& cfg);
RewardFit train_reward(const Dataset& ds, const RegressionConfig& cfg);

// Undiscounted sum r(s_0, a_0) + sum_{i=1}^{L-1} r(s_i, a_i) over a trajectory
// of L+1 states and L actions; the final state carries no reward term.
double trajectory_return(const RewardFunction& reward, ConstMatrixRef states, ConstMatrixRef actions);

nlohmann::json dynamics_to_json(const DynamicsModel& m);
DynamicsModel dynamics_from_json(const nlohmann::json& doc);
nlohmann::json reward_to_json(const RewardModel& m);
RewardModel reward_from_json(const nlohmann::json& doc);

}  // namespace dydiff
