#include "dydiff/world_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dydiff/error.hpp"

namespace dydiff {

namespace {

void check_pair(ConstMatrixRef states, ConstMatrixRef actions) {
  if (states.rows != actions.rows) throw DimensionError("state/action batch sizes differ");
  if (!all_finite(states.flat()) || !all_finite(actions.flat()))
    throw NumericError("non-finite model input");
}

Matrix model_inputs(const Normalizer& norm, ConstMatrixRef states, ConstMatrixRef actions) {
  return hconcat(norm.normalize_states(states), norm.normalize_actions(actions));
}

double batch_mse(const Mlp& mlp, const Matrix& inputs, const Matrix& targets,
                 std::span<const std::size_t> rows) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  constexpr std::size_t kChunk = 4096;
  for (std::size_t begin = 0; begin < rows.size(); begin += kChunk) {
    auto idx = rows.subspan(begin, std::min(kChunk, rows.size() - begin));
    Matrix x = take_rows(inputs, idx);
    Matrix y = take_rows(targets, idx);
    Matrix pred = mlp.forward(x);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred.flat()[i] - y.flat()[i];
      total += d * d;
    }
  }
  return total / static_cast<double>(rows.size() * targets.cols());
}

}  // namespace

Matrix EnvTransition::predict_next(ConstMatrixRef states, ConstMatrixRef actions) const {
  if (states.rows != actions.rows) throw DimensionError("EnvTransition: batch sizes differ");
  Matrix out(states.rows, env_.state_dim());
  for (std::size_t r = 0; r < states.rows; ++r) {
    StepResult res = env_.step(states.row(r), actions.row(r));
    std::copy(res.next_state.begin(), res.next_state.end(), out.row(r).begin());
  }
  return out;
}

std::vector<double> EnvReward::reward(ConstMatrixRef states, ConstMatrixRef actions) const {
  if (states.rows != actions.rows) throw DimensionError("EnvReward: batch sizes differ");
  std::vector<double> out(states.rows);
  for (std::size_t r = 0; r < states.rows; ++r) out[r] = env_.step(states.row(r), actions.row(r)).reward;
  return out;
}

FitReport fit_regression(Mlp& mlp, const Matrix& inputs, const Matrix& targets,
                         const RegressionConfig& cfg) {
  if (inputs.rows() == 0) throw ConfigError("fit_regression: empty dataset");
  if (inputs.rows() != targets.rows()) throw DimensionError("fit_regression: row mismatch");
  if (cfg.batch_size == 0) throw ConfigError("fit_regression: batch_size must be >= 1");
  if (cfg.holdout_fraction < 0.0 || cfg.holdout_fraction >= 1.0)
    throw ConfigError("fit_regression: holdout_fraction must be in [0, 1)");

  const std::size_t n = inputs.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(cfg.seed, {0x5b1e});
  shuffle_indices(order, split_rng);
  const auto n_holdout = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(n)));
  std::vector<std::size_t> holdout(order.end() - static_cast<std::ptrdiff_t>(n_holdout), order.end());
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_holdout));

  AdamState adam(mlp.parameter_count(), cfg.adam);
  const std::size_t out_dim = targets.cols();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, {0xe90c, epoch});
    shuffle_indices(train, rng);
    for (std::size_t begin = 0; begin < train.size(); begin += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, train.size() - begin);
      std::span<const std::size_t> idx(train.data() + begin, count);
      Matrix x = take_rows(inputs, idx);
      Matrix y = take_rows(targets, idx);
      MlpTape tape = mlp.forward_tape(x);
      Matrix grad(count, out_dim);
      const double scale = 2.0 / static_cast<double>(count * out_dim);
      for (std::size_t i = 0; i < grad.size(); ++i)
        grad.flat()[i] = scale * (tape.output.flat()[i] - y.flat()[i]);
      MlpGradients g = mlp.backward(tape, grad);
      adam_step(adam, mlp.parameters(), g.parameters);
    }
  }

  FitReport report;
  report.train_size = train.size();
  report.holdout_size = holdout.size();
  report.train_mse = batch_mse(mlp, inputs, targets, train);
  report.holdout_mse = batch_mse(mlp, inputs, targets, holdout);
  return report;
}

DynamicsModel::DynamicsModel(Mlp mlp, Normalizer normalizer, std::vector<double> delta_mean,
                             std::vector<double> delta_std)
    : mlp_(std::move(mlp)),
      normalizer_(std::move(normalizer)),
      delta_mean_(std::move(delta_mean)),
      delta_std_(std::move(delta_std)) {
  if (mlp_.output_dim() != delta_mean_.size() || delta_mean_.size() != delta_std_.size() ||
      mlp_.input_dim() != normalizer_.state_mean.size() + normalizer_.action_mean.size())
    throw DimensionError("DynamicsModel: inconsistent dims");
}

Matrix DynamicsModel::predict_next(ConstMatrixRef states, ConstMatrixRef actions) const {
  check_pair(states, actions);
  Matrix out = mlp_.forward(model_inputs(normalizer_, states, actions));
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) = states(r, c) + (out(r, c) * delta_std_[c] + delta_mean_[c]);
  return out;
}

RewardModel::RewardModel(Mlp mlp, Normalizer normalizer)
    : mlp_(std::move(mlp)), normalizer_(std::move(normalizer)) {
  if (mlp_.output_dim() != 1 ||
      mlp_.input_dim() != normalizer_.state_mean.size() + normalizer_.action_mean.size())
    throw DimensionError("RewardModel: inconsistent dims");
}

std::vector<double> RewardModel::reward(ConstMatrixRef states, ConstMatrixRef actions) const {
  check_pair(states, actions);
  Matrix out = mlp_.forward(model_inputs(normalizer_, states, actions));
  std::vector<double> r(out.rows());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = normalizer_.denormalize_reward(out(i, 0));
  return r;
}

DynamicsFit train_dynamics(const Dataset& ds, const RegressionConfig& cfg) {
  if (ds.num_transitions() == 0) throw ConfigError("train_dynamics: empty dataset");
  TransitionBatch tb = flatten_transitions(ds);
  const std::size_t S = ds.state_dim;
  Matrix delta(tb.size(), S);
  std::vector<double> mean(S, 0.0), stdev(S, 0.0);
  for (std::size_t r = 0; r < tb.size(); ++r)
    for (std::size_t c = 0; c < S; ++c) {
      delta(r, c) = tb.next_states(r, c) - tb.states(r, c);
      mean[c] += delta(r, c);
    }
  const double n = static_cast<double>(tb.size());
  for (double& m : mean) m /= n;
  for (std::size_t r = 0; r < tb.size(); ++r)
    for (std::size_t c = 0; c < S; ++c) stdev[c] += (delta(r, c) - mean[c]) * (delta(r, c) - mean[c]);
  for (double& s : stdev) s = std::max(std::sqrt(s / n), Normalizer::kMinStd);
  for (std::size_t r = 0; r < tb.size(); ++r)
    for (std::size_t c = 0; c < S; ++c) delta(r, c) = (delta(r, c) - mean[c]) / stdev[c];

  std::vector<std::size_t> sizes{S + ds.action_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(S);
  Mlp mlp = Mlp::init(sizes, Activation::relu, derive_seed(cfg.seed, {0x1d}));
  Matrix inputs = model_inputs(ds.normalizer, tb.states, tb.actions);
  FitReport report = fit_regression(mlp, inputs, delta, cfg);
  return {DynamicsModel(std::move(mlp), ds.normalizer, std::move(mean), std::move(stdev)), report};
}

RewardFit train_reward(const Dataset& ds, const RegressionConfig& cfg) {
  if (ds.num_transitions() == 0) throw ConfigError("train_reward: empty dataset");
  TransitionBatch tb = flatten_transitions(ds);
  Matrix targets(tb.size(), 1);
  for (std::size_t r = 0; r < tb.size(); ++r) targets(r, 0) = ds.normalizer.normalize_reward(tb.rewards[r]);
  std::vector<std::size_t> sizes{ds.state_dim + ds.action_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  Mlp mlp = Mlp::init(sizes, Activation::relu, derive_seed(cfg.seed, {0x2e}));
  Matrix inputs = model_inputs(ds.normalizer, tb.states, tb.actions);
  FitReport report = fit_regression(mlp, inputs, targets, cfg);
  return {RewardModel(std::move(mlp), ds.normalizer), report};
}

double trajectory_return(const RewardFunction& reward, ConstMatrixRef states, ConstMatrixRef actions) {
  if (actions.rows == 0 || states.rows != actions.rows + 1)
    throw DimensionError("trajectory_return: need L+1 states and L >= 1 actions");
  ConstMatrixRef head{states.data, actions.rows, states.cols};
  const auto r = reward.reward(head, actions);
  double total = 0.0;
  for (double v : r) total += v;
  return total;
}

nlohmann::json dynamics_to_json(const DynamicsModel& m) {
  nlohmann::json doc = mlp_to_json(m.mlp());
  doc["kind"] = "dynamics";
  doc["normalizer"] = normalizer_to_json(m.normalizer());
  doc["delta_mean"] = m.delta_mean();
  doc["delta_std"] = m.delta_std();
  return doc;
}

DynamicsModel dynamics_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "dynamics")
      throw FormatError("checkpoint kind is not 'dynamics'");
    return DynamicsModel(mlp_from_json(doc), normalizer_from_json(doc.at("normalizer")),
                         doc.at("delta_mean").get<std::vector<double>>(),
                         doc.at("delta_std").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dynamics checkpoint: ") + e.what());
  }
}

nlohmann::json reward_to_json(const RewardModel& m) {
  nlohmann::json doc = mlp_to_json(m.mlp());
  doc["kind"] = "reward";
  doc["normalizer"] = normalizer_to_json(m.normalizer());
  return doc;
}

RewardModel reward_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "reward") throw FormatError("checkpoint kind is not 'reward'");
    return RewardModel(mlp_from_json(doc), normalizer_from_json(doc.at("normalizer")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("reward checkpoint: ") + e.what());
  }
}

}  // namespace dydiff
