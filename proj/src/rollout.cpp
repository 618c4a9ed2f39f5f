#include "dydiff/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dydiff/csv.hpp"
#include "dydiff/error.hpp"
#include "dydiff/log.hpp"

namespace dydiff {

Matrix FunctionPolicy::act(ConstMatrixRef states) const {
  Matrix out(states.rows, action_dim_);
  for (std::size_t r = 0; r < states.rows; ++r) {
    auto a = fn_(states.row(r));
    if (a.size() != action_dim_) throw DimensionError("FunctionPolicy: callable returned the wrong action size");
    std::copy(a.begin(), a.end(), out.row(r).begin());
  }
  return out;
}

std::string to_string(FilterKind k) { return k == FilterKind::hardmax ? "hardmax" : "softmax"; }

FilterKind filter_kind_from_string(const std::string& name) {
  if (name == "hardmax") return FilterKind::hardmax;
  if (name == "softmax") return FilterKind::softmax;
  throw ConfigError("unknown filter kind '" + name + "' (expected hardmax or softmax)");
}

void RolloutConfig::validate() const {
  if (horizon < 1) throw ConfigError("rollout: L must be >= 1");
  if (batch_size < 1) throw ConfigError("rollout: batch size B_r must be >= 1");
  if (!(filter_fraction > 0.0 && filter_fraction <= 1.0)) throw ConfigError("rollout: eta must be in (0, 1]");
  if (!(real_ratio >= 0.0 && real_ratio <= 1.0)) throw ConfigError("rollout: alpha must be in [0, 1]");
  if (rollout_period < 1) throw ConfigError("rollout: rollout_period must be >= 1");
  if (buffer_capacity < 1) throw ConfigError("rollout: buffer_capacity must be >= 1");
}

RolloutBatch autoregressive_rollout_batch(const TransitionModel& model, const Policy& policy,
                                          ConstMatrixRef s0, std::size_t L) {
  const std::size_t B = s0.rows, S = s0.cols;
  RolloutBatch out;
  out.failed_step.assign(B, -1);
  for (std::size_t b = 0; b < B; ++b)
    if (!all_finite(s0.row(b))) out.failed_step[b] = 0;

  std::vector<Matrix> states(B, Matrix(L + 1, S)), actions(B);
  Matrix cur(s0);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(s0.row(b).begin(), s0.row(b).end(), states[b].row(0).begin());
    if (out.failed_step[b] >= 0) std::fill(cur.row(b).begin(), cur.row(b).end(), 0.0);
  }
  for (std::size_t i = 0; i < L; ++i) {
    Matrix a = policy.act(cur);
    if (i == 0)
      for (std::size_t b = 0; b < B; ++b) actions[b] = Matrix(L, a.cols());
    for (std::size_t b = 0; b < B; ++b)
      if (out.failed_step[b] < 0 && !all_finite(a.row(b))) out.failed_step[b] = static_cast<int>(i);
    for (std::size_t b = 0; b < B; ++b)
      if (out.failed_step[b] >= 0) std::fill(a.row(b).begin(), a.row(b).end(), 0.0);
    Matrix next = model.predict_next(cur, a);
    for (std::size_t b = 0; b < B; ++b) {
      if (out.failed_step[b] < 0 && !all_finite(next.row(b))) out.failed_step[b] = static_cast<int>(i);
      if (out.failed_step[b] >= 0) std::fill(next.row(b).begin(), next.row(b).end(), 0.0);
      std::copy(a.row(b).begin(), a.row(b).end(), actions[b].row(i).begin());
      std::copy(next.row(b).begin(), next.row(b).end(), states[b].row(i + 1).begin());
    }
    cur = std::move(next);
  }
  out.trajectories.resize(B);
  for (std::size_t b = 0; b < B; ++b) out.trajectories[b] = {std::move(states[b]), std::move(actions[b])};
  return out;
}

Trajectory autoregressive_rollout(const TransitionModel& model, const Policy& policy,
                                  std::span<const double> s0, std::size_t L) {
  RolloutBatch b = autoregressive_rollout_batch(model, policy, ConstMatrixRef{s0.data(), 1, s0.size()}, L);
  if (b.failed_step[0] >= 0)
    throw NumericError("autoregressive_rollout: non-finite state or action at step " +
                       std::to_string(b.failed_step[0]));
  return std::move(b.trajectories[0]);
}

Matrix policy_relabel(const Policy& policy, ConstMatrixRef states) {
  Matrix a = policy.act(states);
  if (a.rows() != states.rows) throw DimensionError("policy_relabel: policy returned the wrong number of rows");
  return a;
}

double dynamics_residual(const TransitionModel& reference, const Trajectory& traj) {
  const std::size_t L = traj.horizon();
  if (L == 0) return 0.0;
  ConstMatrixRef head{traj.states.flat().data(), L, traj.states.cols()};
  Matrix pred = reference.predict_next(head, traj.actions);
  double total = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < pred.cols(); ++c) {
      const double d = traj.states(i + 1, c) - pred(i, c);
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  return total / static_cast<double>(L);
}

GenerateResult dydiff_generate(const DiffusionSampler& diffusion, const TransitionModel& dyn_model,
                               const Policy& policy, ConstMatrixRef s0_batch, const RolloutConfig& cfg,
                               std::uint64_t seed, std::uint64_t epoch,
                               const TransitionModel* residual_reference) {
  cfg.validate();
  const TrajectoryLayout& layout = diffusion.layout;
  const std::size_t L = cfg.horizon, S = layout.state_dim, A = layout.action_dim, B = s0_batch.rows;
  if (cfg.iterations > 0) {
    if (diffusion.denoiser == nullptr) throw ConfigError("dydiff_generate: M > 0 requires a denoiser");
    if (layout.horizon != L || diffusion.denoiser->width() != layout.width())
      throw DimensionError("dydiff_generate: denoiser layout does not match the rollout length");
    if (!diffusion.normalizer.defined) throw ConfigError("dydiff_generate: undefined normalizer");
  }
  if (cfg.iterations > 0 && s0_batch.cols != S) throw DimensionError("dydiff_generate: state dim mismatch");

  RolloutBatch seeded = autoregressive_rollout_batch(dyn_model, policy, s0_batch, L);
  std::vector<bool> alive(B);
  for (std::size_t b = 0; b < B; ++b) alive[b] = seeded.failed_step[b] < 0;
  std::vector<Trajectory> current = seeded.trajectories;

  for (std::size_t k = 1; k <= cfg.iterations; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < B; ++b)
      if (alive[b]) rows.push_back(b);
    if (rows.empty()) break;
    const std::size_t n = rows.size();
    Matrix s0n(n, S), an(n, L * A);
    std::vector<Rng> rngs;
    rngs.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      const Trajectory& t = current[rows[j]];
      auto z = diffusion.normalizer.normalize_state(s0_batch.row(rows[j]));
      std::copy(z.begin(), z.end(), s0n.row(j).begin());
      for (std::size_t i = 0; i < L; ++i) {
        auto za = diffusion.normalizer.normalize_action(t.actions.row(i));
        std::copy(za.begin(), za.end(), an.row(j).begin() + static_cast<std::ptrdiff_t>(i * A));
      }
      rngs.emplace_back(seed, std::initializer_list<std::uint64_t>{0xd7, epoch, rows[j], k});
    }
    Conditioning cond = make_conditioning(layout, s0n, an);
    SampleBatch sample = sample_batch(*diffusion.denoiser, cond, diffusion.schedule, diffusion.sampler, rngs);

    // Relabel a_i = pi(s_i), i < L, for all surviving rows in one policy call.
    Matrix relabel_states(n * L, S);
    for (std::size_t j = 0; j < n; ++j) {
      Trajectory& t = current[rows[j]];
      if (sample.failed_step[j] >= 0) {
        alive[rows[j]] = false;
        continue;
      }
      Matrix states, unused;
      tensor_to_trajectory(layout, sample.trajectories.row(j), diffusion.normalizer, states, unused);
      std::copy(s0_batch.row(rows[j]).begin(), s0_batch.row(rows[j]).end(), states.row(0).begin());
      if (!all_finite(states.flat())) {
        alive[rows[j]] = false;
        continue;
      }
      t.states = std::move(states);
      for (std::size_t i = 0; i < L; ++i)
        std::copy(t.states.row(i).begin(), t.states.row(i).end(), relabel_states.row(j * L + i).begin());
    }
    Matrix acts = policy_relabel(policy, relabel_states);
    for (std::size_t j = 0; j < n; ++j) {
      if (!alive[rows[j]]) continue;
      Trajectory& t = current[rows[j]];
      for (std::size_t i = 0; i < L; ++i) {
        auto src = acts.row(j * L + i);
        if (!all_finite(src)) alive[rows[j]] = false;
        std::copy(src.begin(), src.end(), t.actions.row(i).begin());
      }
    }
  }

  GenerateResult out;
  double r0 = 0.0, rM = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (!alive[b]) {
      ++out.failures;
      continue;
    }
    if (residual_reference) {
      r0 += dynamics_residual(*residual_reference, seeded.trajectories[b]);
      rM += dynamics_residual(*residual_reference, current[b]);
    }
    out.trajectories.push_back(std::move(current[b]));
    out.source_rows.push_back(b);
  }
  const double kept = static_cast<double>(out.trajectories.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.mean_residual_k0 = residual_reference && kept > 0 ? r0 / kept : nan;
  out.mean_residual_kM = residual_reference && kept > 0 ? rM / kept : nan;
  return out;
}

std::size_t filter_count(std::size_t n, double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("filter: eta must be in (0, 1]");
  return std::min(n, static_cast<std::size_t>(std::floor(eta * static_cast<double>(n) + 1e-9)));
}

namespace {

void warn_if_empty(std::size_t keep, std::size_t n, double eta) {
  if (keep == 0 && n > 0)
    warn("filter keeps floor(" + csv_number(eta) + " * " + std::to_string(n) + ") = 0 trajectories");
}

}  // namespace

std::vector<std::size_t> filter_hardmax(std::span<const double> returns, double eta) {
  const std::size_t keep = filter_count(returns.size(), eta);
  warn_if_empty(keep, returns.size(), eta);
  std::vector<std::size_t> order(returns.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> filter_softmax(std::span<const double> returns, double eta, Rng& rng) {
  const std::size_t keep = filter_count(returns.size(), eta);
  warn_if_empty(keep, returns.size(), eta);
  if (!all_finite(returns)) throw NumericError("filter_softmax: non-finite predicted return");
  std::vector<std::size_t> remaining(returns.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<std::size_t> picked;
  std::vector<double> w;
  while (picked.size() < keep) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i : remaining) top = std::max(top, returns[i]);
    w.resize(remaining.size());
    double total = 0.0;
    for (std::size_t j = 0; j < remaining.size(); ++j) total += (w[j] = std::exp(returns[remaining[j]] - top));
    double u = rng.uniform() * total;
    std::size_t j = 0;
    for (; j + 1 < remaining.size(); ++j) {
      if (u < w[j]) break;
      u -= w[j];
    }
    picked.push_back(remaining[j]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return picked;
}

SyntheticBuffer::SyntheticBuffer(std::size_t capacity, std::size_t state_dim, std::size_t action_dim)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
  if (capacity_ == 0) throw ConfigError("SyntheticBuffer: capacity must be >= 1");
  states_.resize(capacity_ * state_dim_);
  next_states_.resize(capacity_ * state_dim_);
  actions_.resize(capacity_ * action_dim_);
  rewards_.resize(capacity_);
}

std::size_t SyntheticBuffer::slot(std::size_t i) const { return (head_ + capacity_ - size_ + i) % capacity_; }

void SyntheticBuffer::insert(std::span<const double> s, std::span<const double> a, double r,
                             std::span<const double> s_next) {
  if (s.size() != state_dim_ || s_next.size() != state_dim_ || a.size() != action_dim_)
    throw DimensionError("SyntheticBuffer: transition dims");
  std::copy(s.begin(), s.end(), states_.begin() + static_cast<std::ptrdiff_t>(head_ * state_dim_));
  std::copy(s_next.begin(), s_next.end(), next_states_.begin() + static_cast<std::ptrdiff_t>(head_ * state_dim_));
  std::copy(a.begin(), a.end(), actions_.begin() + static_cast<std::ptrdiff_t>(head_ * action_dim_));
  rewards_[head_] = r;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  ++inserted_;
}

void SyntheticBuffer::get(std::size_t i, std::span<double> s, std::span<double> a, double& r,
                          std::span<double> s_next) const {
  if (i >= size_) throw DimensionError("SyntheticBuffer: index out of range");
  const std::size_t k = slot(i);
  std::copy_n(states_.begin() + static_cast<std::ptrdiff_t>(k * state_dim_), state_dim_, s.begin());
  std::copy_n(next_states_.begin() + static_cast<std::ptrdiff_t>(k * state_dim_), state_dim_, s_next.begin());
  std::copy_n(actions_.begin() + static_cast<std::ptrdiff_t>(k * action_dim_), action_dim_, a.begin());
  r = rewards_[k];
}

TransitionBatch SyntheticBuffer::sample(std::size_t n, Rng& rng) const {
  TransitionBatch out{Matrix(n, state_dim_), Matrix(n, action_dim_), std::vector<double>(n),
                      Matrix(n, state_dim_), std::vector<double>(n, 0.0)};
  if (n > 0 && size_ == 0) throw ConfigError("SyntheticBuffer: sampling from an empty buffer");
  for (std::size_t r = 0; r < n; ++r)
    get(rng.index(size_), out.states.row(r), out.actions.row(r), out.rewards[r], out.next_states.row(r));
  return out;
}

std::size_t buffer_insert(SyntheticBuffer& buffer, const Trajectory& traj, const RewardFunction& reward) {
  const std::size_t L = traj.horizon();
  if (L == 0) return 0;
  ConstMatrixRef head{traj.states.flat().data(), L, traj.states.cols()};
  const auto r = reward.reward(head, traj.actions);
  for (std::size_t i = 0; i < L; ++i) buffer.insert(traj.states.row(i), traj.actions.row(i), r[i], traj.states.row(i + 1));
  return L;
}

std::size_t real_count(double alpha, std::size_t B) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("sample_mixed: alpha must be in [0, 1]");
  return std::min(B, static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(B) - 1e-9)));
}

TransitionBatch sample_mixed(const TransitionBatch& real, const SyntheticBuffer& syn, double alpha,
                             std::size_t B, Rng& rng) {
  if (B == 0) throw ConfigError("sample_mixed: B must be >= 1");
  const std::size_t n_real = syn.empty() ? B : real_count(alpha, B);
  if (n_real > 0 && real.size() == 0) throw ConfigError("sample_mixed: real dataset is empty");
  const std::size_t S = real.states.cols(), A = real.actions.cols();
  TransitionBatch out{Matrix(B, S), Matrix(B, A), std::vector<double>(B), Matrix(B, S), std::vector<double>(B)};
  for (std::size_t r = 0; r < n_real; ++r) {
    const std::size_t k = rng.index(real.size());
    std::copy_n(real.states.row(k).begin(), S, out.states.row(r).begin());
    std::copy_n(real.actions.row(k).begin(), A, out.actions.row(r).begin());
    std::copy_n(real.next_states.row(k).begin(), S, out.next_states.row(r).begin());
    out.rewards[r] = real.rewards[k];
    out.dones[r] = real.dones[k];
  }
  for (std::size_t r = n_real; r < B; ++r) {
    syn.get(rng.index(syn.size()), out.states.row(r), out.actions.row(r), out.rewards[r], out.next_states.row(r));
    out.dones[r] = 0.0;
  }
  return out;
}

std::string rollout_csv_header() {
  return "epoch,n_generated,n_filtered,mean_predicted_return,mean_dyn_residual_k0,mean_dyn_residual_kM";
}

std::string rollout_csv_row(const RolloutDiagnostics& d) {
  return csv_join({std::to_string(d.epoch), std::to_string(d.n_generated), std::to_string(d.n_filtered),
                   csv_number(d.mean_predicted_return), csv_number(d.mean_dyn_residual_k0),
                   csv_number(d.mean_dyn_residual_kM)});
}

}  // namespace dydiff
