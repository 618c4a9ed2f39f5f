#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dydiff/dataset.hpp"
#include "dydiff/diffusion.hpp"
#include "dydiff/env.hpp"
#include "dydiff/offline_policy.hpp"
#include "dydiff/rollout.hpp"
#include "dydiff/world_models.hpp"

namespace dydiff {

extern const char* const kVersion;

// Every knob of a run in one flat JSON object. Keys mirror the field names.
struct ExperimentConfig {
  std::string env = "pointmass";
  std::size_t env_horizon = 200;
  double start_jitter = 0.0;

  // Noise-annealed controller mixture (the medium-replay analogue).
  std::size_t n_episodes = 100;
  std::vector<double> quality_noise{1.0, 0.6, 0.3, 0.1};
  std::vector<double> quality_fraction{0.4, 0.3, 0.2, 0.1};

  // Inputs; empty means the file the producing command writes for this seed.
  std::string dataset_path;
  std::string dynamics_path;
  std::string reward_path;
  std::string denoiser_path;

  std::size_t world_epochs = 100;
  std::size_t world_batch = 256;
  std::vector<std::size_t> world_hidden{128, 128};
  double world_lr = 3e-4;
  double holdout_fraction = 0.1;

  std::size_t window_length = 100;
  std::size_t diffusion_epochs = 100;
  std::size_t diffusion_batch = 64;
  std::vector<std::size_t> diffusion_hidden{512, 512, 512};
  double diffusion_lr = 2e-4;
  double diffusion_final_lr_fraction = 1.0;
  bool diffusion_clean_conditions = true;
  NoiseSchedule schedule;
  SamplerConfig sampler;

  Td3BcConfig agent;
  std::size_t epochs = 100;
  std::size_t updates_per_epoch = 1000;
  std::size_t batch_size = 256;
  std::size_t eval_episodes = 10;

  std::size_t rollout_iterations = 3;
  std::size_t rollout_batch = 64;
  double filter_fraction = 0.5;
  FilterKind filter = FilterKind::softmax;
  double real_ratio = 0.6;
  std::size_t rollout_period = 10;
  std::size_t buffer_capacity = 100000;

  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "out";

  std::size_t bound_instances = 100;
  std::size_t bound_horizon = 20;
  std::vector<std::size_t> mse_horizons{1, 5, 10, 25, 50, 100};
  std::size_t mse_starts = 50;

  void validate() const;
};

// Unknown keys and ill-typed values raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

PointMass make_env(const ExperimentConfig& cfg);
CollectionRecipe make_recipe(const ExperimentConfig& cfg, std::uint64_t seed);
RegressionConfig world_regression(const ExperimentConfig& cfg, std::uint64_t seed);
DenoiserTrainConfig denoiser_training(const ExperimentConfig& cfg, std::uint64_t seed);
RolloutConfig rollout_config(const ExperimentConfig& cfg);
PolicyTrainConfig policy_training(const ExperimentConfig& cfg, TrainingMode mode, std::uint64_t seed);

// Denoiser plus the normalizer and sampler settings it is meant to run with.
struct DiffusionCheckpoint {
  EdmDenoiser denoiser;
  Normalizer normalizer;
  SamplerConfig sampler;

  DiffusionSampler sampler_view() const {
    return {&denoiser, denoiser.layout(), normalizer, denoiser.schedule(), sampler};
  }
};
nlohmann::json diffusion_checkpoint_to_json(const DiffusionCheckpoint& c);
DiffusionCheckpoint diffusion_checkpoint_from_json(const nlohmann::json& doc);

nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// The behaviour controller without exploration noise, as a batched policy.
FunctionPolicy controller_policy(const GoalSeekingController& c);

// One instance per command invocation. Outputs land in out_dir and are named
// <command>[-variant]_<seed>[_part].<ext>; every call returns what it wrote.
class Runner {
 public:
  explicit Runner(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  std::filesystem::path out_dir() const { return cfg_.out_dir; }

  std::vector<std::filesystem::path> gen_data(std::uint64_t seed) const;
  std::vector<std::filesystem::path> train_world(std::uint64_t seed) const;
  std::vector<std::filesystem::path> train_diffusion(std::uint64_t seed) const;
  std::vector<std::filesystem::path> train_policy(std::uint64_t seed, TrainingMode mode) const;
  std::vector<std::filesystem::path> ablate(std::uint64_t seed, const std::string& axis,
                                            const std::vector<double>& values) const;
  std::vector<std::filesystem::path> verify_bounds(std::uint64_t seed) const;
  std::vector<std::filesystem::path> analyze_mse(std::uint64_t seed) const;

  std::filesystem::path write_manifest(const std::string& command, const std::vector<std::uint64_t>& seeds,
                                       const nlohmann::json& options,
                                       const std::vector<std::filesystem::path>& outputs) const;

  // Default input locations for a seed.
  std::filesystem::path dataset_file(std::uint64_t seed) const;
  std::filesystem::path dynamics_file(std::uint64_t seed) const;
  std::filesystem::path reward_file(std::uint64_t seed) const;
  std::filesystem::path denoiser_file(std::uint64_t seed) const;

  Dataset load_or_fail_dataset(std::uint64_t seed) const;

 private:
  std::filesystem::path output(const std::string& stem, std::uint64_t seed, const std::string& suffix) const;
  TrainingResult run_policy(const ExperimentConfig& cfg, std::uint64_t seed, TrainingMode mode,
                            const DiffusionCheckpoint* diffusion) const;

  ExperimentConfig cfg_;
};

// Ablation axis name -> config field; ConfigError for an unknown axis.
ExperimentConfig apply_ablation(const ExperimentConfig& cfg, const std::string& axis, double value);

}  // namespace dydiff
