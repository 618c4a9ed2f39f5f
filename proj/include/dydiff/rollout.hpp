#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dydiff/dataset.hpp"
#include "dydiff/diffusion.hpp"
#include "dydiff/world_models.hpp"

namespace dydiff {

// Deterministic batched policy in raw units.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Matrix act(ConstMatrixRef states) const = 0;
};

// Row-wise policy from a callable, mainly for tests and scripted controllers.
class FunctionPolicy final : public Policy {
 public:
  using Fn = std::function<std::vector<double>(std::span<const double>)>;
  FunctionPolicy(std::size_t action_dim, Fn fn) : action_dim_(action_dim), fn_(std::move(fn)) {}
  Matrix act(ConstMatrixRef states) const override;

 private:
  std::size_t action_dim_;
  Fn fn_;
};

enum class FilterKind { hardmax, softmax };
std::string to_string(FilterKind k);
FilterKind filter_kind_from_string(const std::string& name);

struct RolloutConfig {
  std::size_t horizon = 100;  // L
  std::size_t iterations = 3;  // M
  std::size_t batch_size = 64;  // B_r
  double filter_fraction = 0.5;  // eta
  FilterKind filter = FilterKind::softmax;
  double real_ratio = 0.6;  // alpha
  std::size_t rollout_period = 10;
  std::size_t buffer_capacity = 100000;

  void validate() const;
};

struct Trajectory {
  Matrix states;   // (L+1) x S
  Matrix actions;  // L x A

  std::size_t horizon() const { return actions.rows(); }
};

// s_{i+1} = model(s_i, pi(s_i)) from s_0. Throws NumericError naming the step
// at which the trajectory stopped being finite.
Trajectory autoregressive_rollout(const TransitionModel& model, const Policy& policy,
                                  std::span<const double> s0, std::size_t L);

// Batched form; rows that go non-finite are flagged instead of aborting.
struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::vector<int> failed_step;  // -1 when the row stayed finite
};
RolloutBatch autoregressive_rollout_batch(const TransitionModel& model, const Policy& policy,
                                          ConstMatrixRef s0, std::size_t L);

// a_i = pi(s_i) for every row of `states`.
Matrix policy_relabel(const Policy& policy, ConstMatrixRef states);

// Mean over steps of ||s_{i+1} - T(s_i, a_i)||.
double dynamics_residual(const TransitionModel& reference, const Trajectory& traj);

// Diffusion side of the generator: denoiser plus the normalizer that maps raw
// units to the denoiser's space.
struct DiffusionSampler {
  const DenoisingFunction* denoiser = nullptr;
  TrajectoryLayout layout;
  Normalizer normalizer;
  NoiseSchedule schedule;
  SamplerConfig sampler;
};

struct GenerateResult {
  std::vector<Trajectory> trajectories;
  std::vector<std::size_t> source_rows;  // row of s0_batch each trajectory came from
  std::size_t failures = 0;
  // Filled when a reference transition model is supplied; NaN otherwise.
  double mean_residual_k0 = 0.0;
  double mean_residual_kM = 0.0;
};

// Autoregressive seed followed by M rounds of (conditional diffusion sample,
// policy relabel). Row b of round k samples from the stream
// (seed, epoch, b, k), so results do not depend on the batch split.
GenerateResult dydiff_generate(const DiffusionSampler& diffusion, const TransitionModel& dyn_model,
                               const Policy& policy, ConstMatrixRef s0_batch, const RolloutConfig& cfg,
                               std::uint64_t seed, std::uint64_t epoch,
                               const TransitionModel* residual_reference = nullptr);

// Number of trajectories kept by either filter.
std::size_t filter_count(std::size_t n, double eta);
// Top filter_count returns, ties to the lower index; indices ascending.
std::vector<std::size_t> filter_hardmax(std::span<const double> returns, double eta);
// filter_count draws without replacement from softmax(returns); draw order.
std::vector<std::size_t> filter_softmax(std::span<const double> returns, double eta, Rng& rng);

class SyntheticBuffer {
 public:
  SyntheticBuffer(std::size_t capacity, std::size_t state_dim, std::size_t action_dim);

  void insert(std::span<const double> s, std::span<const double> a, double r, std::span<const double> s_next);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t total_inserted() const { return inserted_; }
  bool empty() const { return size_ == 0; }

  // Transition by age order, 0 = oldest still held.
  void get(std::size_t i, std::span<double> s, std::span<double> a, double& r, std::span<double> s_next) const;
  // Uniform with replacement over current contents; done is always 0.
  TransitionBatch sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t slot(std::size_t i) const;

  std::size_t capacity_, state_dim_, action_dim_;
  std::size_t size_ = 0, head_ = 0;
  std::uint64_t inserted_ = 0;
  std::vector<double> states_, actions_, rewards_, next_states_;
};

// Adds the L transitions of `traj` with rewards from `reward`.
std::size_t buffer_insert(SyntheticBuffer& buffer, const Trajectory& traj, const RewardFunction& reward);

// ceil(alpha * B) rows uniformly from `real`, the rest from `syn`; all real
// when `syn` is empty.
TransitionBatch sample_mixed(const TransitionBatch& real, const SyntheticBuffer& syn, double alpha,
                             std::size_t B, Rng& rng);
std::size_t real_count(double alpha, std::size_t B);

// One line of the rollout metrics CSV.
struct RolloutDiagnostics {
  std::size_t epoch = 0;
  std::size_t n_generated = 0;
  std::size_t n_filtered = 0;
  double mean_predicted_return = 0.0;
  double mean_dyn_residual_k0 = 0.0;
  double mean_dyn_residual_kM = 0.0;
};
std::string rollout_csv_header();
std::string rollout_csv_row(const RolloutDiagnostics& d);

}  // namespace dydiff
