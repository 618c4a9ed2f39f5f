#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dydiff/adam.hpp"
#include "dydiff/dataset.hpp"
#include "dydiff/env.hpp"
#include "dydiff/mlp.hpp"
#include "dydiff/rollout.hpp"
#include "json.hpp"

namespace dydiff {

struct Td3BcConfig {
  std::vector<std::size_t> hidden{128, 128};
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double discount = 0.99;
  // Target step size: target <- (1 - tau) * target + tau * online.
  double tau = 0.005;
  std::size_t policy_delay = 2;
  // Smoothing noise std and clip, as fractions of the action bound.
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  double bc_alpha = 2.5;
  // Replaces alpha / mean|Q| when set (0 gives pure behaviour cloning).
  std::optional<double> fixed_lambda;

  void validate() const;
};

struct UpdateReport;

class Td3BcAgent final : public Policy {
 public:
  Td3BcAgent() = default;
  Td3BcAgent(std::size_t state_dim, std::size_t action_dim, double action_bound, Normalizer normalizer,
             const Td3BcConfig& cfg, std::uint64_t seed);

  // bound * tanh(actor(normalized s)), row-wise.
  Matrix act(ConstMatrixRef states) const override;
  Matrix target_act(ConstMatrixRef states) const;
  // Q_k(s, a) for k in {0, 1}; `target` selects the target copy.
  std::vector<double> q_value(std::size_t k, ConstMatrixRef states, ConstMatrixRef actions, bool target = false) const;

  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  double action_bound() const { return action_bound_; }
  const Td3BcConfig& config() const { return cfg_; }
  const Normalizer& normalizer() const { return normalizer_; }
  std::uint64_t updates() const { return updates_; }

  Mlp actor, actor_target;
  Mlp critic[2], critic_target[2];
  AdamState actor_opt, critic_opt[2];

 private:
  Matrix critic_input(ConstMatrixRef states, ConstMatrixRef actions) const;

  std::size_t state_dim_ = 0, action_dim_ = 0;
  double action_bound_ = 1.0;
  Normalizer normalizer_;
  Td3BcConfig cfg_;
  std::uint64_t updates_ = 0;

  friend UpdateReport td3bc_update(Td3BcAgent&, const TransitionBatch&, Rng&);
};

struct UpdateReport {
  double critic_loss = 0.0;  // sum of both critics' mean squared errors
  // NaN on steps where the delayed actor update does not run.
  double actor_loss = 0.0;
  double bc_loss = 0.0;
  double lambda = 0.0;
  bool actor_updated = false;
  std::vector<double> critic_targets;
};

// y = r + gamma (1 - done) min_k Q'_k(s', clip(pi'(s') + clipped noise)).
std::vector<double> critic_targets(const Td3BcAgent& agent, const TransitionBatch& batch, Rng& rng);

UpdateReport td3bc_update(Td3BcAgent& agent, const TransitionBatch& batch, Rng& rng);

struct EvalResult {
  double mean = 0.0;
  double stdev = 0.0;
  std::vector<double> returns;
};

// Undiscounted returns of the deterministic policy; episode i starts from
// env.initial_state(Rng(seed, {i})).
EvalResult evaluate(const Policy& policy, const Environment& env, std::size_t n_episodes, std::uint64_t seed);

enum class TrainingMode { baseline, dydiff };
std::string to_string(TrainingMode m);
TrainingMode training_mode_from_string(const std::string& name);

struct PolicyTrainConfig {
  Td3BcConfig agent;
  TrainingMode mode = TrainingMode::baseline;
  std::size_t epochs = 100;
  std::size_t updates_per_epoch = 1000;
  std::size_t batch_size = 256;
  std::size_t eval_episodes = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

// Pretrained pieces used in dydiff mode; baseline mode never touches them.
struct Components {
  const DiffusionSampler* diffusion = nullptr;
  const TransitionModel* dynamics = nullptr;
  const RewardFunction* reward = nullptr;
  // Optional ground-truth step used only for residual diagnostics.
  const TransitionModel* residual_reference = nullptr;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  TrainingMode mode = TrainingMode::baseline;
  std::uint64_t seed = 0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double bc_loss = 0.0;
  std::size_t n_syn_transitions = 0;
};

struct TrainingResult {
  std::vector<EpochMetrics> curve;
  std::vector<RolloutDiagnostics> rollouts;
  Td3BcAgent agent;
  // Mean evaluation return over the last min(5, epochs) epochs.
  double final_score = 0.0;
};

TrainingResult run_training(const Dataset& ds, const Environment& env, const Components& components,
                            const RolloutConfig& rollout_cfg, const PolicyTrainConfig& cfg);

std::string curve_csv_header();
std::string curve_csv_row(const EpochMetrics& m);
std::string curve_csv(const std::vector<EpochMetrics>& curve);

nlohmann::json agent_to_json(const Td3BcAgent& agent);
Td3BcAgent agent_from_json(const nlohmann::json& doc);

}  // namespace dydiff
