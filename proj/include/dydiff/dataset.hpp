#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dydiff/env.hpp"
#include "dydiff/matrix.hpp"
#include "json.hpp"

namespace dydiff {

// One real trajectory (s_0, a_0, s_1, ..., a_{H-1}, s_H).
struct Episode {
  Matrix states;   // (H+1) x S
  Matrix actions;  // H x A
  std::vector<double> rewards;
  bool terminal = false;

  std::size_t length() const { return actions.rows(); }
};

// Per-dimension affine normalisation of states, actions and rewards.
struct Normalizer {
  static constexpr double kMinStd = 1e-8;

  bool defined = false;
  std::vector<double> state_mean, state_std;
  std::vector<double> action_mean, action_std;
  double reward_mean = 0.0;
  double reward_std = 1.0;

  std::vector<double> normalize_state(std::span<const double> s) const;
  std::vector<double> denormalize_state(std::span<const double> z) const;
  std::vector<double> normalize_action(std::span<const double> a) const;
  std::vector<double> denormalize_action(std::span<const double> z) const;
  double normalize_reward(double r) const { return (r - reward_mean) / reward_std; }
  double denormalize_reward(double z) const { return z * reward_std + reward_mean; }

  // Row-wise versions.
  Matrix normalize_states(ConstMatrixRef s) const;
  Matrix normalize_actions(ConstMatrixRef a) const;
};

nlohmann::json normalizer_to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& doc);

struct Dataset {
  std::string env_name;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::vector<Episode> episodes;
  Normalizer normalizer;
  // Collection recipe, seeds and anything else worth recording.
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t num_transitions() const;
};

// Mean/std over every state, action and reward in the episodes. An empty
// dataset yields an undefined normalizer.
Normalizer compute_normalizer(const std::vector<Episode>& episodes, std::size_t state_dim,
                              std::size_t action_dim);

// Throws DimensionError if any episode is inconsistent with the declared dims.
void validate_dataset(const Dataset& ds);

struct QualityLevel {
  double noise = 0.0;
  double fraction = 0.0;
};

struct CollectionRecipe {
  std::vector<QualityLevel> quality_mix;
  std::size_t num_episodes = 0;
  std::uint64_t seed = 0;
  GoalSeekingController controller;
};

// Rolls out the noisy goal-seeking controller. Episode i uses the noise level
// whose cumulative-fraction bucket contains (i + 0.5) / num_episodes and an
// rng stream derived from (seed, i).
Dataset collect_dataset(const PointMass& env, const CollectionRecipe& recipe);

// Runs one episode of `controller` at `noise` from the env's initial state.
Episode run_controller_episode(const PointMass& env, const GoalSeekingController& controller,
                               double noise, Rng& rng);

// JSON-lines file: header line then one episode per line.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
std::string serialize_dataset(const Dataset& ds);
Dataset parse_dataset(const std::string& text);

// Flat transition arrays (s, a, r, s', done), used by replay sampling and
// world-model training.
struct TransitionBatch {
  Matrix states;
  Matrix actions;
  std::vector<double> rewards;
  Matrix next_states;
  std::vector<double> dones;

  std::size_t size() const { return states.rows(); }
};

// done = 1 only for the final transition of a terminal episode.
TransitionBatch flatten_transitions(const Dataset& ds);

}  // namespace dydiff
