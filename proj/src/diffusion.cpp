#include "dydiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dydiff/error.hpp"

namespace dydiff {

std::size_t TrajectoryLayout::position_of(std::size_t slot) const {
  const std::size_t block = state_dim + action_dim;
  const std::size_t step = slot / block;
  return 2 * step + (slot % block < state_dim ? 0 : 1);
}

bool TrajectoryLayout::is_state_slot(std::size_t slot) const {
  return slot % (state_dim + action_dim) < state_dim;
}

std::vector<std::size_t> TrajectoryLayout::condition_slots() const {
  std::vector<std::size_t> slots;
  slots.reserve(state_dim + horizon * action_dim);
  for (std::size_t d = 0; d < state_dim; ++d) slots.push_back(state_index(0, d));
  for (std::size_t i = 0; i < horizon; ++i)
    for (std::size_t d = 0; d < action_dim; ++d) slots.push_back(action_index(i, d));
  return slots;
}

void TrajectoryLayout::validate() const {
  if (state_dim == 0) throw ConfigError("trajectory layout: state_dim must be >= 1");
  if (horizon > 0 && action_dim == 0) throw ConfigError("trajectory layout: action_dim must be >= 1");
}

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0.0) || !(sigma_max > 0.0) || !(sigma_data > 0.0) || !(rho > 0.0) || !(p_std > 0.0))
    throw ConfigError("noise schedule: sigma_min, sigma_max, sigma_data, rho and p_std must be positive");
  if (!(sigma_min < sigma_max)) throw ConfigError("noise schedule: sigma_min must be < sigma_max");
  if (n_steps < 1) throw ConfigError("noise schedule: n_steps must be >= 1");
  if (!std::isfinite(p_mean)) throw ConfigError("noise schedule: p_mean must be finite");
}

void SamplerConfig::validate() const {
  if (!(s_churn >= 0.0)) throw ConfigError("sampler: s_churn must be >= 0");
  if (!(s_tmin < s_tmax)) throw ConfigError("sampler: s_tmin must be < s_tmax");
  if (!(s_noise >= 0.0) || !std::isfinite(s_noise)) throw ConfigError("sampler: s_noise must be finite and >= 0");
}

nlohmann::json schedule_to_json(const NoiseSchedule& s) {
  return {{"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}, {"sigma_data", s.sigma_data},
          {"rho", s.rho},             {"n_steps", s.n_steps},     {"p_mean", s.p_mean},
          {"p_std", s.p_std}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& doc) {
  NoiseSchedule s;
  s.sigma_min = doc.at("sigma_min").get<double>();
  s.sigma_max = doc.at("sigma_max").get<double>();
  s.sigma_data = doc.at("sigma_data").get<double>();
  s.rho = doc.at("rho").get<double>();
  s.n_steps = doc.at("n_steps").get<std::size_t>();
  s.p_mean = doc.at("p_mean").get<double>();
  s.p_std = doc.at("p_std").get<double>();
  s.validate();
  return s;
}

std::vector<double> karras_timesteps(const NoiseSchedule& schedule) {
  schedule.validate();
  const std::size_t N = schedule.n_steps;
  std::vector<double> t(N + 1, 0.0);
  if (N == 1) {
    t[0] = schedule.sigma_max;
    return t;
  }
  const double lo = std::pow(schedule.sigma_min, 1.0 / schedule.rho);
  const double hi = std::pow(schedule.sigma_max, 1.0 / schedule.rho);
  for (std::size_t i = 0; i < N; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(N - 1);
    t[i] = std::pow(hi + frac * (lo - hi), schedule.rho);
  }
  // Pin the endpoints against pow round-off.
  t[0] = schedule.sigma_max;
  t[N - 1] = schedule.sigma_min;
  return t;
}

double churn_gamma(const NoiseSchedule& schedule, const SamplerConfig& sampler, double t) {
  if (t < sampler.s_tmin || t > sampler.s_tmax) return 0.0;
  return std::min(sampler.s_churn / static_cast<double>(schedule.n_steps), std::sqrt(2.0) - 1.0);
}

double edm_loss_weight(double sigma, double sigma_data) {
  if (!(sigma > 0.0)) throw ConfigError("edm_loss_weight: sigma must be > 0");
  const double denom = sigma * sigma_data;
  return (sigma * sigma + sigma_data * sigma_data) / (denom * denom);
}

double training_sigma_from_normal(const NoiseSchedule& schedule, double z) {
  return std::exp(schedule.p_mean + schedule.p_std * z);
}

double sample_training_sigma(const NoiseSchedule& schedule, Rng& rng) {
  return training_sigma_from_normal(schedule, rng.normal());
}

Preconditioning edm_preconditioning(double sigma, double sigma_data) {
  const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
  const double root = std::sqrt(s2 + d2);
  return {d2 / (s2 + d2), sigma * sigma_data / root, 1.0 / root, std::log(sigma) / 4.0};
}

void apply_conditions(const TrajectoryLayout& layout, std::span<double> trajectory,
                      std::span<const double> s0, ConstMatrixRef actions) {
  if (trajectory.size() != layout.width() || s0.size() != layout.state_dim ||
      actions.rows != layout.horizon || (layout.horizon > 0 && actions.cols != layout.action_dim))
    throw DimensionError("apply_conditions: dimensions do not match the layout");
  for (std::size_t d = 0; d < layout.state_dim; ++d) trajectory[layout.state_index(0, d)] = s0[d];
  for (std::size_t i = 0; i < layout.horizon; ++i)
    for (std::size_t d = 0; d < layout.action_dim; ++d) trajectory[layout.action_index(i, d)] = actions(i, d);
}

void Conditioning::apply(MatrixRef batch) const {
  if (slots.empty()) return;
  if (values.rows() != batch.rows || values.cols() != slots.size())
    throw DimensionError("conditioning: values do not match the batch");
  for (std::size_t r = 0; r < batch.rows; ++r) {
    auto row = batch.row(r);
    auto v = values.row(r);
    for (std::size_t j = 0; j < slots.size(); ++j) row[slots[j]] = v[j];
  }
}

Conditioning make_conditioning(const TrajectoryLayout& layout, ConstMatrixRef s0, ConstMatrixRef actions) {
  const std::size_t S = layout.state_dim, A = layout.action_dim, L = layout.horizon;
  if (s0.cols != S || actions.cols != L * A || s0.rows != actions.rows)
    throw DimensionError("make_conditioning: dimensions do not match the layout");
  Conditioning c;
  c.slots = layout.condition_slots();
  c.values = Matrix(s0.rows, c.slots.size());
  for (std::size_t r = 0; r < s0.rows; ++r) {
    auto v = c.values.row(r);
    std::copy(s0.row(r).begin(), s0.row(r).end(), v.begin());
    std::copy(actions.row(r).begin(), actions.row(r).end(), v.begin() + static_cast<std::ptrdiff_t>(S));
  }
  return c;
}

std::vector<double> window_to_tensor(const TrajectoryLayout& layout, const Window& w, const Normalizer& n) {
  const std::size_t L = layout.horizon;
  if (w.states.rows() != L + 1 || w.actions.rows() != L || w.states.cols() != layout.state_dim ||
      (L > 0 && w.actions.cols() != layout.action_dim) || w.pad_mask.size() != 2 * L + 1)
    throw DimensionError("window_to_tensor: window does not match the layout");
  std::vector<double> out(layout.width(), 0.0);
  for (std::size_t i = 0; i <= L; ++i) {
    if (w.pad_mask[2 * i]) continue;
    auto z = n.normalize_state(w.states.row(i));
    for (std::size_t d = 0; d < layout.state_dim; ++d) out[layout.state_index(i, d)] = z[d];
  }
  for (std::size_t i = 0; i < L; ++i) {
    if (w.pad_mask[2 * i + 1]) continue;
    auto z = n.normalize_action(w.actions.row(i));
    for (std::size_t d = 0; d < layout.action_dim; ++d) out[layout.action_index(i, d)] = z[d];
  }
  return out;
}

std::vector<double> loss_mask(const TrajectoryLayout& layout, const std::vector<bool>& pad_mask) {
  if (pad_mask.size() != 2 * layout.horizon + 1) throw DimensionError("loss_mask: pad mask length");
  std::vector<double> m(layout.width(), 0.0);
  for (std::size_t i = 1; i <= layout.horizon; ++i) {
    if (pad_mask[2 * i]) continue;
    for (std::size_t d = 0; d < layout.state_dim; ++d) m[layout.state_index(i, d)] = 1.0;
  }
  return m;
}

void tensor_to_trajectory(const TrajectoryLayout& layout, std::span<const double> tensor, const Normalizer& n,
                          Matrix& states, Matrix& actions) {
  if (tensor.size() != layout.width()) throw DimensionError("tensor_to_trajectory: width");
  const std::size_t L = layout.horizon, S = layout.state_dim, A = layout.action_dim;
  states = Matrix(L + 1, S);
  actions = Matrix(L, A);
  std::vector<double> buf(std::max(S, A));
  for (std::size_t i = 0; i <= L; ++i) {
    for (std::size_t d = 0; d < S; ++d) buf[d] = tensor[layout.state_index(i, d)];
    auto raw = n.denormalize_state(std::span<const double>(buf.data(), S));
    std::copy(raw.begin(), raw.end(), states.row(i).begin());
  }
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t d = 0; d < A; ++d) buf[d] = tensor[layout.action_index(i, d)];
    auto raw = n.denormalize_action(std::span<const double>(buf.data(), A));
    std::copy(raw.begin(), raw.end(), actions.row(i).begin());
  }
}

// ---------------------------------------------------------------------------
// Denoisers

EdmDenoiser::EdmDenoiser(Mlp raw, TrajectoryLayout layout, NoiseSchedule schedule)
    : raw_(std::move(raw)), layout_(layout), schedule_(schedule), width_(layout.width()) {
  layout_.validate();
  schedule_.validate();
  if (raw_.input_dim() != width_ + 1 || raw_.output_dim() != width_)
    throw DimensionError("EdmDenoiser: raw net must map width+1 -> width");
}

EdmDenoiser EdmDenoiser::init(const TrajectoryLayout& layout, const NoiseSchedule& schedule,
                              const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  std::vector<std::size_t> sizes{layout.width() + 1};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(layout.width());
  return EdmDenoiser(Mlp::init(sizes, Activation::relu, seed), layout, schedule);
}

Matrix EdmDenoiser::raw_input(ConstMatrixRef x, std::span<const double> sigmas) const {
  if (x.cols != width_ || sigmas.size() != x.rows) throw DimensionError("EdmDenoiser: input shape");
  Matrix in(x.rows, width_ + 1);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const Preconditioning p = edm_preconditioning(sigmas[r], schedule_.sigma_data);
    auto src = x.row(r);
    auto dst = in.row(r);
    for (std::size_t c = 0; c < width_; ++c) dst[c] = p.c_in * src[c];
    dst[width_] = p.c_noise;
  }
  return in;
}

Matrix EdmDenoiser::denoise(ConstMatrixRef x, std::span<const double> sigmas) const {
  Matrix out = raw_.forward(raw_input(x, sigmas));
  for (std::size_t r = 0; r < x.rows; ++r) {
    const Preconditioning p = edm_preconditioning(sigmas[r], schedule_.sigma_data);
    auto src = x.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < width_; ++c) dst[c] = p.c_skip * src[c] + p.c_out * dst[c];
  }
  return out;
}

std::vector<double> analytic_denoise(ConstMatrixRef points, std::span<const double> x, double sigma) {
  if (points.rows == 0) throw ConfigError("analytic_denoise: empty point set");
  if (points.cols != x.size()) throw DimensionError("analytic_denoise: width mismatch");
  if (!(sigma > 0.0)) throw ConfigError("analytic_denoise: sigma must be > 0");
  std::vector<double> logw(points.rows);
  for (std::size_t i = 0; i < points.rows; ++i) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
      const double d = x[c] - points(i, c);
      d2 += d * d;
    }
    logw[i] = -d2 / (2.0 * sigma * sigma);
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  double total = 0.0;
  for (double& w : logw) total += (w = std::exp(w - top));
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < points.rows; ++i)
    for (std::size_t c = 0; c < x.size(); ++c) out[c] += logw[i] / total * points(i, c);
  return out;
}

AnalyticDenoiser::AnalyticDenoiser(Matrix points) : points_(std::move(points)) {
  if (points_.rows() == 0) throw ConfigError("AnalyticDenoiser: empty point set");
}

Matrix AnalyticDenoiser::denoise(ConstMatrixRef x, std::span<const double> sigmas) const {
  if (x.cols != points_.cols() || sigmas.size() != x.rows) throw DimensionError("AnalyticDenoiser: input shape");
  Matrix out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto d = analytic_denoise(points_, x.row(r), sigmas[r]);
    std::copy(d.begin(), d.end(), out.row(r).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

double masked_row_loss(std::span<const double> denoised, std::span<const double> clean,
                       std::span<const double> mask, double weight) {
  double sum = 0.0, count = 0.0;
  for (std::size_t c = 0; c < clean.size(); ++c) {
    if (mask[c] == 0.0) continue;
    const double d = denoised[c] - clean[c];
    sum += mask[c] * d * d;
    count += mask[c];
  }
  return count > 0.0 ? weight * sum / count : 0.0;
}

}  // namespace

EdmDenoiser train_denoiser(const Matrix& data, const Matrix& mask, const TrajectoryLayout& layout,
                           const NoiseSchedule& schedule, const DenoiserTrainConfig& cfg,
                           DenoiserTrainReport* report) {
  layout.validate();
  schedule.validate();
  if (data.rows() == 0) throw ConfigError("train_denoiser: no training samples");
  if (data.cols() != layout.width() || mask.cols() != layout.width() || mask.rows() != data.rows())
    throw DimensionError("train_denoiser: data/mask width must equal the trajectory width");
  if (cfg.batch_size == 0) throw ConfigError("train_denoiser: batch_size must be >= 1");
  if (!all_finite(data.flat())) throw NumericError("train_denoiser: non-finite training data");

  EdmDenoiser model = EdmDenoiser::init(layout, schedule, cfg.hidden, derive_seed(cfg.seed, {0x3d}));
  AdamState adam(model.raw().parameter_count(), cfg.adam);
  const std::size_t W = layout.width();
  const double sd = schedule.sigma_data;
  std::vector<std::size_t> order(data.rows());
  std::iota(order.begin(), order.end(), 0);
  const std::vector<std::size_t> cond_slots = cfg.clean_conditions ? layout.condition_slots() : std::vector<std::size_t>{};
  DenoiserTrainReport rep;
  const std::size_t batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(std::max<std::size_t>(cfg.epochs * batches, 1));
  const double pi = std::acos(-1.0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, {0xd1ff, epoch});
    shuffle_indices(order, rng);
    double epoch_total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, order.size() - begin);
      std::span<const std::size_t> idx(order.data() + begin, B);
      Matrix clean = take_rows(data, idx);
      Matrix m = take_rows(mask, idx);
      Matrix noisy(B, W);
      std::vector<double> sigmas(B);
      for (std::size_t r = 0; r < B; ++r) {
        sigmas[r] = sample_training_sigma(schedule, rng);
        for (std::size_t c = 0; c < W; ++c) noisy(r, c) = clean(r, c) + sigmas[r] * rng.normal();
        for (std::size_t c : cond_slots) noisy(r, c) = clean(r, c);
      }
      MlpTape tape = model.raw().forward_tape(model.raw_input(noisy, sigmas));
      Matrix upstream(B, W);
      for (std::size_t r = 0; r < B; ++r) {
        const Preconditioning p = edm_preconditioning(sigmas[r], sd);
        const double weight = edm_loss_weight(sigmas[r], sd);
        double count = 0.0;
        for (std::size_t c = 0; c < W; ++c) count += m(r, c);
        auto raw_out = tape.output.row(r);
        std::vector<double> denoised(W);
        for (std::size_t c = 0; c < W; ++c) denoised[c] = p.c_skip * noisy(r, c) + p.c_out * raw_out[c];
        epoch_total += masked_row_loss(denoised, clean.row(r), m.row(r), weight);
        if (count == 0.0) continue;
        const double scale = 2.0 * weight * p.c_out / (count * static_cast<double>(B));
        for (std::size_t c = 0; c < W; ++c) upstream(r, c) = scale * m(r, c) * (denoised[c] - clean(r, c));
      }
      MlpGradients g = model.raw().backward(tape, upstream);
      const double progress = static_cast<double>(rep.steps) / total_steps;
      const double anneal = 0.5 * (1.0 + std::cos(pi * progress));
      adam.config.learning_rate =
          cfg.adam.learning_rate * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * anneal);
      adam_step(adam, model.raw().parameters(), g.parameters);
      ++rep.steps;
    }
    rep.epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
  }
  if (report) *report = std::move(rep);
  return model;
}

EdmDenoiser train_denoiser(const std::vector<Window>& windows, const Normalizer& normalizer,
                           const NoiseSchedule& schedule, const DenoiserTrainConfig& cfg,
                           DenoiserTrainReport* report) {
  if (windows.empty()) throw ConfigError("train_denoiser: no windows");
  if (!normalizer.defined) throw ConfigError("train_denoiser: normalizer is undefined");
  const Window& first = windows.front();
  TrajectoryLayout layout{first.horizon(), first.states.cols(), first.actions.cols()};
  Matrix data(windows.size(), layout.width());
  Matrix mask(windows.size(), layout.width());
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const Window& w = windows[k];
    if (w.horizon() != layout.horizon || w.states.cols() != layout.state_dim ||
        w.actions.cols() != layout.action_dim)
      throw DimensionError("train_denoiser: window " + std::to_string(k) + " has a different (L, S, A)");
    auto t = window_to_tensor(layout, w, normalizer);
    auto lm = loss_mask(layout, w.pad_mask);
    std::copy(t.begin(), t.end(), data.row(k).begin());
    std::copy(lm.begin(), lm.end(), mask.row(k).begin());
  }
  return train_denoiser(data, mask, layout, schedule, cfg, report);
}

double denoising_loss(const DenoisingFunction& denoiser, const Matrix& clean, const Matrix& noisy,
                      const Matrix& mask, std::span<const double> sigmas, double sigma_data) {
  if (clean.rows() == 0) return 0.0;
  Matrix d = denoiser.denoise(noisy, sigmas);
  double total = 0.0;
  for (std::size_t r = 0; r < clean.rows(); ++r)
    total += masked_row_loss(d.row(r), clean.row(r), mask.row(r), edm_loss_weight(sigmas[r], sigma_data));
  return total / static_cast<double>(clean.rows());
}

// ---------------------------------------------------------------------------
// Sampling

std::size_t SampleBatch::failures() const {
  return static_cast<std::size_t>(std::count_if(failed_step.begin(), failed_step.end(), [](int s) { return s >= 0; }));
}

SampleBatch sample_batch(const DenoisingFunction& denoiser, const Conditioning& conditions,
                         const NoiseSchedule& schedule, const SamplerConfig& sampler, std::vector<Rng>& rngs) {
  sampler.validate();
  const std::vector<double> t = karras_timesteps(schedule);
  const std::size_t B = rngs.size(), W = denoiser.width(), N = schedule.n_steps;
  if (!conditions.empty() && conditions.values.rows() != B)
    throw DimensionError("sample_batch: one conditioning row per rng stream is required");
  for (std::size_t s : conditions.slots)
    if (s >= W) throw DimensionError("sample_batch: conditioning slot outside the trajectory");

  SampleBatch out{Matrix(B, W), std::vector<int>(B, -1)};
  Matrix& x = out.trajectories;
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t c = 0; c < W; ++c) x(r, c) = t[0] * rngs[r].normal();

  auto quarantine = [&](Matrix& m, std::size_t step) {
    for (std::size_t r = 0; r < B; ++r) {
      if (out.failed_step[r] >= 0 || all_finite(m.row(r))) continue;
      out.failed_step[r] = static_cast<int>(step);
    }
    for (std::size_t r = 0; r < B; ++r)
      if (out.failed_step[r] >= 0) std::fill(m.row(r).begin(), m.row(r).end(), 0.0);
  };

  Matrix x_hat(B, W), x_next(B, W), d(B, W);
  std::vector<double> sig(B);
  for (std::size_t i = 0; i < N; ++i) {
    const double gamma = churn_gamma(schedule, sampler, t[i]);
    const double t_hat = t[i] + gamma * t[i];
    const double extra = std::sqrt(std::max(t_hat * t_hat - t[i] * t[i], 0.0));
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t c = 0; c < W; ++c) x_hat(r, c) = x(r, c) + extra * sampler.s_noise * rngs[r].normal();

    std::fill(sig.begin(), sig.end(), t_hat);
    Matrix den = denoiser.denoise(x_hat, sig);
    const double h = t[i + 1] - t_hat;
    for (std::size_t k = 0; k < x_hat.size(); ++k) {
      d.flat()[k] = (x_hat.flat()[k] - den.flat()[k]) / t_hat;
      x_next.flat()[k] = x_hat.flat()[k] + h * d.flat()[k];
    }
    conditions.apply(x_next.view());
    quarantine(x_next, i);

    if (t[i + 1] != 0.0) {
      std::fill(sig.begin(), sig.end(), t[i + 1]);
      Matrix den2 = denoiser.denoise(x_next, sig);
      for (std::size_t k = 0; k < x_next.size(); ++k) {
        const double d2 = (x_next.flat()[k] - den2.flat()[k]) / t[i + 1];
        x_next.flat()[k] = x_hat.flat()[k] + h * 0.5 * (d.flat()[k] + d2);
      }
      conditions.apply(x_next.view());
      quarantine(x_next, i);
    }
    std::swap(x, x_next);
  }
  return out;
}

std::vector<double> sample_conditional(const DenoisingFunction& denoiser, const TrajectoryLayout& layout,
                                       std::span<const double> s0, ConstMatrixRef actions,
                                       const NoiseSchedule& schedule, const SamplerConfig& sampler, Rng& rng) {
  if (denoiser.width() != layout.width()) throw DimensionError("sample_conditional: denoiser width mismatch");
  if (actions.rows != layout.horizon || s0.size() != layout.state_dim)
    throw DimensionError("sample_conditional: conditions do not match the layout");
  ConstMatrixRef s0_row{s0.data(), 1, s0.size()};
  ConstMatrixRef a_row{actions.data, 1, actions.rows * actions.cols};
  Conditioning cond = make_conditioning(layout, s0_row, a_row);
  std::vector<Rng> rngs{rng};
  SampleBatch b = sample_batch(denoiser, cond, schedule, sampler, rngs);
  rng = rngs[0];
  if (b.failed_step[0] >= 0)
    throw NumericError("sample_conditional: non-finite values at sampler step " + std::to_string(b.failed_step[0]));
  return std::vector<double>(b.trajectories.row(0).begin(), b.trajectories.row(0).end());
}

nlohmann::json denoiser_to_json(const EdmDenoiser& d) {
  nlohmann::json doc = mlp_to_json(d.raw());
  doc["kind"] = "denoiser";
  doc["L"] = d.layout().horizon;
  doc["S"] = d.layout().state_dim;
  doc["A"] = d.layout().action_dim;
  doc["schedule"] = schedule_to_json(d.schedule());
  return doc;
}

EdmDenoiser denoiser_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "denoiser") throw FormatError("checkpoint kind is not 'denoiser'");
    TrajectoryLayout layout{doc.at("L").get<std::size_t>(), doc.at("S").get<std::size_t>(),
                            doc.at("A").get<std::size_t>()};
    return EdmDenoiser(mlp_from_json(doc), layout, schedule_from_json(doc.at("schedule")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("denoiser checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("denoiser checkpoint: ") + e.what());
  }
}

}  // namespace dydiff
