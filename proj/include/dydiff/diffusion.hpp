#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dydiff/adam.hpp"
#include "dydiff/dataset.hpp"
#include "dydiff/matrix.hpp"
#include "dydiff/mlp.hpp"
#include "dydiff/rng.hpp"
#include "dydiff/window.hpp"
#include "json.hpp"

namespace dydiff {

// Flat interleaved trajectory (s_0, a_0, s_1, a_1, ..., a_{L-1}, s_L).
struct TrajectoryLayout {
  std::size_t horizon = 0;  // L
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;

  std::size_t width() const { return (horizon + 1) * state_dim + horizon * action_dim; }
  std::size_t state_index(std::size_t step, std::size_t dim) const {
    return step * (state_dim + action_dim) + dim;
  }
  std::size_t action_index(std::size_t step, std::size_t dim) const {
    return step * (state_dim + action_dim) + state_dim + dim;
  }
  // Interleaved position (2i for state i, 2i+1 for action i) of a flat slot.
  std::size_t position_of(std::size_t slot) const;
  bool is_state_slot(std::size_t slot) const;

  // Slots overwritten by hard replacement: s_0 followed by every action.
  std::vector<std::size_t> condition_slots() const;
  void validate() const;

  bool operator==(const TrajectoryLayout&) const = default;
};

struct NoiseSchedule {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double sigma_data = 0.5;
  double rho = 7.0;
  std::size_t n_steps = 34;
  double p_mean = -1.2;
  double p_std = 1.2;

  void validate() const;
};

struct SamplerConfig {
  double s_churn = 60.0;
  double s_noise = 1.002;
  double s_tmin = 0.370;
  double s_tmax = 52.212;

  void validate() const;
};

nlohmann::json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& doc);

// t_0 > ... > t_{N-1} > t_N = 0.
std::vector<double> karras_timesteps(const NoiseSchedule& schedule);
// Churn factor for a step starting at noise level t.
double churn_gamma(const NoiseSchedule& schedule, const SamplerConfig& sampler, double t);
double edm_loss_weight(double sigma, double sigma_data);
// exp(p_mean + p_std * z)
double training_sigma_from_normal(const NoiseSchedule& schedule, double z);
double sample_training_sigma(const NoiseSchedule& schedule, Rng& rng);

struct Preconditioning {
  double c_skip, c_out, c_in, c_noise;
};
Preconditioning edm_preconditioning(double sigma, double sigma_data);

// Hard replacement of the first state and all actions of one flat trajectory.
// Inputs are in normalized units; actions is L x A.
void apply_conditions(const TrajectoryLayout& layout, std::span<double> trajectory,
                      std::span<const double> s0, ConstMatrixRef actions);

// Fixed slot indices with per-row values, written by hard replacement.
struct Conditioning {
  std::vector<std::size_t> slots;
  Matrix values;  // rows x slots.size()

  bool empty() const { return slots.empty(); }
  void apply(MatrixRef batch) const;
};

// Batch conditioning on (s_0, tau_a): s0 is B x S, actions is B x (L*A) with
// action i of row b at columns [i*A, (i+1)*A).
Conditioning make_conditioning(const TrajectoryLayout& layout, ConstMatrixRef s0, ConstMatrixRef actions);

// Window -> normalized flat tensor; padded positions become zero.
std::vector<double> window_to_tensor(const TrajectoryLayout& layout, const Window& w, const Normalizer& n);
// 1 on s_{i>0} slots that are not padded, 0 elsewhere.
std::vector<double> loss_mask(const TrajectoryLayout& layout, const std::vector<bool>& pad_mask);
// Flat tensor -> raw-unit states ((L+1) x S) and actions (L x A).
void tensor_to_trajectory(const TrajectoryLayout& layout, std::span<const double> tensor, const Normalizer& n,
                          Matrix& states, Matrix& actions);

// D(x; sigma) applied row-wise with one noise level per row.
class DenoisingFunction {
 public:
  virtual ~DenoisingFunction() = default;
  virtual std::size_t width() const = 0;
  virtual Matrix denoise(ConstMatrixRef x, std::span<const double> sigmas) const = 0;
};

// Raw MLP wrapped in EDM preconditioning. The raw net sees [c_in * x, c_noise].
class EdmDenoiser final : public DenoisingFunction {
 public:
  EdmDenoiser() = default;
  EdmDenoiser(Mlp raw, TrajectoryLayout layout, NoiseSchedule schedule);

  static EdmDenoiser init(const TrajectoryLayout& layout, const NoiseSchedule& schedule,
                          const std::vector<std::size_t>& hidden, std::uint64_t seed);

  std::size_t width() const override { return width_; }
  Matrix denoise(ConstMatrixRef x, std::span<const double> sigmas) const override;

  // Raw-net input for a batch (exposed for training).
  Matrix raw_input(ConstMatrixRef x, std::span<const double> sigmas) const;

  const Mlp& raw() const { return raw_; }
  Mlp& raw() { return raw_; }
  const TrajectoryLayout& layout() const { return layout_; }
  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  Mlp raw_;
  TrajectoryLayout layout_;
  NoiseSchedule schedule_;
  std::size_t width_ = 0;
};

// Posterior mean of an empirical distribution under Gaussian noise.
std::vector<double> analytic_denoise(ConstMatrixRef points, std::span<const double> x, double sigma);

class AnalyticDenoiser final : public DenoisingFunction {
 public:
  explicit AnalyticDenoiser(Matrix points);
  std::size_t width() const override { return points_.cols(); }
  Matrix denoise(ConstMatrixRef x, std::span<const double> sigmas) const override;

 private:
  Matrix points_;
};

struct DenoiserTrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{512, 512, 512};
  AdamConfig adam{2e-4};
  // Cosine-anneal the learning rate to adam.learning_rate * final_lr_fraction.
  double final_lr_fraction = 1.0;
  // Overwrite the s_0 and action slots of the noised input with their clean
  // values, so training sees what the hard-replacing sampler feeds the net.
  bool clean_conditions = false;
};

struct DenoiserTrainReport {
  std::size_t steps = 0;
  std::vector<double> epoch_loss;  // mean weighted loss per epoch
};

// Weighted denoising loss per row: lambda(sigma) * mean over masked slots of
// (D(y + sigma n; sigma) - y)^2. Rows of `data` are clean samples; rows of
// `mask` select the slots that contribute.
EdmDenoiser train_denoiser(const Matrix& data, const Matrix& mask, const TrajectoryLayout& layout,
                           const NoiseSchedule& schedule, const DenoiserTrainConfig& cfg,
                           DenoiserTrainReport* report = nullptr);

// Window front end: all windows must share (L, S, A).
EdmDenoiser train_denoiser(const std::vector<Window>& windows, const Normalizer& normalizer,
                           const NoiseSchedule& schedule, const DenoiserTrainConfig& cfg,
                           DenoiserTrainReport* report = nullptr);

// Mean weighted loss of `denoiser` on (data, mask) with the given noisy inputs.
double denoising_loss(const DenoisingFunction& denoiser, const Matrix& clean, const Matrix& noisy,
                      const Matrix& mask, std::span<const double> sigmas, double sigma_data);

struct SampleBatch {
  Matrix trajectories;  // B x width
  // -1 for a successful row, otherwise the sampler step at which it went non-finite.
  std::vector<int> failed_step;

  std::size_t failures() const;
};

// Stochastic Heun sampler with hard replacement after each update. Row b
// draws all of its noise from rngs[b], so results do not depend on batching.
SampleBatch sample_batch(const DenoisingFunction& denoiser, const Conditioning& conditions,
                         const NoiseSchedule& schedule, const SamplerConfig& sampler, std::vector<Rng>& rngs);

// Single trajectory; throws NumericError naming the failing step.
std::vector<double> sample_conditional(const DenoisingFunction& denoiser, const TrajectoryLayout& layout,
                                       std::span<const double> s0, ConstMatrixRef actions,
                                       const NoiseSchedule& schedule, const SamplerConfig& sampler, Rng& rng);

nlohmann::json denoiser_to_json(const EdmDenoiser& d);
EdmDenoiser denoiser_from_json(const nlohmann::json& doc);

}  // namespace dydiff
