#include "dydiff/theory_lab.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dydiff/csv.hpp"
#include "dydiff/error.hpp"

namespace dydiff {

TabularMdp::TabularMdp(std::size_t ns, std::size_t na, double gamma, double R)
    : n_states(ns),
      n_actions(na),
      transition(ns * na * ns, 0.0),
      reward(ns * na, 0.0),
      discount(gamma),
      initial(point_mass(ns, 0)),
      reward_bound(R) {}

namespace {

void check_distribution(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ConfigError(std::string(what) + ": negative or non-finite probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw ConfigError(std::string(what) + ": probabilities do not sum to 1");
}

}  // namespace

void TabularMdp::validate() const {
  if (n_states == 0 || n_actions == 0) throw ConfigError("TabularMdp: empty state or action set");
  if (transition.size() != n_states * n_actions * n_states || reward.size() != n_states * n_actions ||
      initial.size() != n_states)
    throw DimensionError("TabularMdp: table sizes do not match n_states/n_actions");
  if (!(discount > 0.0 && discount < 1.0)) throw ConfigError("TabularMdp: discount must be in (0, 1)");
  for (std::size_t s = 0; s < n_states; ++s)
    for (std::size_t a = 0; a < n_actions; ++a) check_distribution(row(s, a), "TabularMdp transition");
  check_distribution(initial, "TabularMdp initial distribution");
  for (double r : reward)
    if (!(std::abs(r) <= reward_bound)) throw ConfigError("TabularMdp: |r| exceeds reward_bound");
}

void validate_policy(const TabularMdp& mdp, const TabularPolicy& pi) {
  if (pi.rows() != mdp.n_states || pi.cols() != mdp.n_actions)
    throw DimensionError("tabular policy shape does not match the MDP");
  for (std::size_t s = 0; s < pi.rows(); ++s) check_distribution(pi.row(s), "tabular policy");
}

Matrix policy_transition(const TabularMdp& mdp, const TabularPolicy& pi) {
  const std::size_t n = mdp.n_states;
  Matrix P(n, n);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const double w = pi(s, a);
      if (w == 0.0) continue;
      auto row = mdp.row(s, a);
      for (std::size_t j = 0; j < n; ++j) P(s, j) += w * row[j];
    }
  return P;
}

std::vector<double> policy_reward(const TabularMdp& mdp, const TabularPolicy& pi) {
  std::vector<double> r(mdp.n_states, 0.0);
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a) r[s] += pi(s, a) * mdp.r(s, a);
  return r;
}

std::vector<double> point_mass(std::size_t n, std::size_t s) {
  if (s >= n) throw ConfigError("point_mass: state index out of range");
  std::vector<double> p(n, 0.0);
  p[s] = 1.0;
  return p;
}

namespace {

std::vector<double> propagate(const Matrix& P, const std::vector<double>& d) {
  const std::size_t n = d.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    if (d[s] == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) out[j] += d[s] * P(s, j);
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void check_same_shape(const TabularMdp& a, const TabularMdp& b) {
  if (a.n_states != b.n_states || a.n_actions != b.n_actions)
    throw DimensionError("tabular MDPs have different shapes");
}

}  // namespace

std::vector<std::vector<double>> marginal_sequence(const TabularMdp& mdp, const TabularPolicy& pi,
                                                   std::span<const double> start, std::size_t horizon) {
  validate_policy(mdp, pi);
  if (start.size() != mdp.n_states) throw DimensionError("marginal_sequence: start distribution size");
  const Matrix P = policy_transition(mdp, pi);
  std::vector<std::vector<double>> seq;
  seq.reserve(horizon + 1);
  seq.emplace_back(start.begin(), start.end());
  for (std::size_t t = 0; t < horizon; ++t) seq.push_back(propagate(P, seq.back()));
  return seq;
}

std::vector<double> exact_marginals(const TabularMdp& mdp, const TabularPolicy& pi, std::size_t s0, std::size_t t) {
  return marginal_sequence(mdp, pi, point_mass(mdp.n_states, s0), t).back();
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("tv_distance: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

double measure_eps_m(const TabularMdp& truth, const TabularMdp& model, const TabularPolicy& pi,
                     std::span<const double> start, std::size_t horizon) {
  check_same_shape(truth, model);
  // Per-state expected one-step TV under pi; the visitation weights it.
  std::vector<double> gap(truth.n_states, 0.0);
  for (std::size_t s = 0; s < truth.n_states; ++s)
    for (std::size_t a = 0; a < truth.n_actions; ++a)
      if (pi(s, a) != 0.0) gap[s] += pi(s, a) * tv_distance(model.row(s, a), truth.row(s, a));
  double eps = 0.0;
  for (const auto& d : marginal_sequence(truth, pi, start, horizon)) eps = std::max(eps, dot(d, gap));
  return eps;
}

double measure_eps_m(const TabularMdp& truth, const TabularMdp& model, const TabularPolicy& pi, std::size_t horizon) {
  return measure_eps_m(truth, model, pi, truth.initial, horizon);
}

Lemma1Report lemma1_check(const TabularMdp& truth, const TabularMdp& model, const TabularPolicy& pi,
                          std::size_t s0, std::size_t horizon) {
  check_same_shape(truth, model);
  const auto start = point_mass(truth.n_states, s0);
  Lemma1Report rep;
  rep.eps_m = measure_eps_m(truth, model, pi, start, horizon);
  const auto p = marginal_sequence(truth, pi, start, horizon);
  const auto q = marginal_sequence(model, pi, start, horizon);
  for (std::size_t t = 0; t <= horizon; ++t) {
    MarginalGapRow row;
    row.t = t;
    row.lhs = tv_distance(q[t], p[t]);
    row.rhs = static_cast<double>(t) * rep.eps_m;
    row.holds = row.lhs <= row.rhs + 1e-10;
    rep.holds = rep.holds && row.holds;
    rep.rows.push_back(row);
  }
  return rep;
}

double exact_return(const TabularMdp& mdp, const TabularPolicy& pi, std::size_t s0) {
  validate_policy(mdp, pi);
  if (s0 >= mdp.n_states) throw ConfigError("exact_return: start state out of range");
  const std::size_t n = mdp.n_states;
  const Matrix P = policy_transition(mdp, pi);
  const auto r = policy_reward(mdp, pi);
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Eigen::VectorXd b(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    b(static_cast<Eigen::Index>(i)) = r[i];
    for (std::size_t j = 0; j < n; ++j)
      A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) -= mdp.discount * P(i, j);
  }
  const Eigen::VectorXd v = A.partialPivLu().solve(b);
  return v(static_cast<Eigen::Index>(s0));
}

double lemma2_bound(double gamma, double R, double eps_m) {
  return 2.0 * R * gamma * eps_m / ((1.0 - gamma) * (1.0 - gamma));
}

double theorem1_bound(double gamma, double R, double eps_d) { return 2.0 * R * eps_d / (1.0 - gamma); }

ReturnGapReport lemma2_check(const TabularMdp& truth, const TabularMdp& model, const TabularPolicy& pi,
                             std::size_t s0, std::size_t horizon) {
  check_same_shape(truth, model);
  if (truth.discount != model.discount) throw ConfigError("lemma2_check: models use different discounts");
  ReturnGapReport rep;
  rep.eps = measure_eps_m(truth, model, pi, point_mass(truth.n_states, s0), horizon);
  rep.delta_j = std::abs(exact_return(truth, pi, s0) - exact_return(model, pi, s0));
  rep.bound = lemma2_bound(truth.discount, std::max(truth.reward_bound, model.reward_bound), rep.eps);
  rep.holds = rep.delta_j <= rep.bound + 1e-10;
  return rep;
}

ReturnGapReport theorem1_check(const TabularMdp& truth, const TabularPolicy& pi, std::size_t s0,
                               const std::vector<std::vector<double>>& model_marginals) {
  if (model_marginals.empty()) throw ConfigError("theorem1_check: no model marginals");
  for (const auto& q : model_marginals) {
    if (q.size() != truth.n_states) throw DimensionError("theorem1_check: marginal size mismatch");
    check_distribution(q, "theorem1_check marginal");
  }
  const std::size_t T = model_marginals.size() - 1;
  const auto p = marginal_sequence(truth, pi, point_mass(truth.n_states, s0), T);
  const auto r = policy_reward(truth, pi);
  ReturnGapReport rep;
  // Past T the two processes coincide, so the return gap is the finite sum.
  double diff = 0.0, disc = 1.0;
  for (std::size_t t = 0; t <= T; ++t) {
    rep.eps = std::max(rep.eps, tv_distance(model_marginals[t], p[t]));
    diff += disc * (dot(model_marginals[t], r) - dot(p[t], r));
    disc *= truth.discount;
  }
  rep.delta_j = std::abs(diff);
  rep.bound = theorem1_bound(truth.discount, truth.reward_bound, rep.eps);
  rep.holds = rep.delta_j <= rep.bound + 1e-10;
  return rep;
}

void BoundParams::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("BoundParams: gamma must be in (0, 1)");
  if (!(R >= 0.0)) throw ConfigError("BoundParams: R must be non-negative");
  if (!(eps_m >= 0.0 && eps_d >= 0.0 && eps_sd >= 0.0)) throw ConfigError("BoundParams: negative error term");
  if (!(C >= 0.0 && c_pi >= 0.0 && c_ad >= 0.0)) throw ConfigError("BoundParams: negative smoothness constant");
}

double iterated_bound(const BoundParams& p, std::size_t k) {
  p.validate();
  const double L = static_cast<double>(p.L);
  const double kd = static_cast<double>(k);
  if (p.C == 1.0) return kd * p.eps_sd + L * p.eps_m;
  const double ck = std::pow(p.C, kd);
  return (1.0 - ck) / (1.0 - p.C) * p.eps_sd + ck * L * p.eps_m;
}

std::vector<double> random_distribution(std::size_t n, Rng& rng) {
  // Flat Dirichlet via normalized exponentials.
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& v : p) {
    v = -std::log(1.0 - rng.uniform());
    sum += v;
  }
  for (auto& v : p) v /= sum;
  // Push the rounding residue onto the largest entry so the sum is 1 to ~1 ulp.
  double s2 = 0.0;
  for (double v : p) s2 += v;
  *std::max_element(p.begin(), p.end()) += 1.0 - s2;
  return p;
}

TabularMdp random_mdp(std::size_t ns, std::size_t na, double gamma, double R, Rng& rng) {
  TabularMdp m(ns, na, gamma, R);
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t a = 0; a < na; ++a) {
      auto d = random_distribution(ns, rng);
      std::copy(d.begin(), d.end(), m.transition.begin() + static_cast<std::ptrdiff_t>((s * na + a) * ns));
      m.r(s, a) = rng.uniform(-R, R);
    }
  m.initial = random_distribution(ns, rng);
  return m;
}

TabularMdp perturb_mdp(const TabularMdp& mdp, double beta, Rng& rng) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("perturb_mdp: beta must be in [0, 1]");
  TabularMdp m = mdp;
  for (std::size_t s = 0; s < m.n_states; ++s)
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      auto u = random_distribution(m.n_states, rng);
      for (std::size_t j = 0; j < m.n_states; ++j) m.p(s, a, j) = (1.0 - beta) * mdp.p(s, a, j) + beta * u[j];
    }
  return m;
}

TabularPolicy random_policy(std::size_t ns, std::size_t na, Rng& rng) {
  TabularPolicy pi(ns, na);
  for (std::size_t s = 0; s < ns; ++s) {
    auto d = random_distribution(na, rng);
    std::copy(d.begin(), d.end(), pi.row(s).begin());
  }
  return pi;
}

std::string bound_csv(const std::vector<BoundRow>& rows) {
  std::string out = "instance_id,quantity_lhs,bound_rhs,slack,holds\n";
  for (const auto& r : rows)
    out += csv_join({std::to_string(r.instance_id), csv_number(r.lhs), csv_number(r.rhs), csv_number(r.rhs - r.lhs),
                     r.holds ? "true" : "false"}) +
           "\n";
  return out;
}

namespace {

struct Instance {
  TabularMdp truth, model;
  TabularPolicy pi;
  std::size_t s0 = 0;
  Rng rng;
};

Instance make_instance(std::uint64_t seed, std::size_t id) {
  Rng rng(seed, {0x7ab, id});
  const std::size_t ns = 2 + rng.index(11), na = 1 + rng.index(4);
  const double gamma = rng.uniform(0.5, 0.97);
  const double R = rng.uniform(0.5, 2.0);
  TabularMdp truth = random_mdp(ns, na, gamma, R, rng);
  TabularMdp model = perturb_mdp(truth, rng.uniform(0.0, 0.5), rng);
  TabularPolicy pi = random_policy(ns, na, rng);
  const std::size_t s0 = rng.index(ns);
  return {std::move(truth), std::move(model), std::move(pi), s0, std::move(rng)};
}

template <class F>
std::vector<BoundRow> sweep(std::size_t n, F&& one) {
  std::vector<BoundRow> rows(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) rows[i] = one(i);
  return rows;
}

}  // namespace

std::vector<BoundRow> lemma1_sweep(std::size_t n, std::uint64_t seed, std::size_t horizon) {
  return sweep(n, [&](std::size_t i) {
    Instance in = make_instance(seed, i);
    Lemma1Report rep = lemma1_check(in.truth, in.model, in.pi, in.s0, horizon);
    // Report the step with the least slack.
    BoundRow row{i, 0.0, 0.0, rep.holds};
    double best = std::numeric_limits<double>::infinity();
    // t = 0 is trivially tight (0 <= 0), so it is skipped.
    for (const auto& r : rep.rows)
      if (r.t > 0 && r.rhs - r.lhs < best) {
        best = r.rhs - r.lhs;
        row.lhs = r.lhs;
        row.rhs = r.rhs;
      }
    return row;
  });
}

std::vector<BoundRow> lemma2_sweep(std::size_t n, std::uint64_t seed) {
  return sweep(n, [&](std::size_t i) {
    Instance in = make_instance(seed, i);
    ReturnGapReport rep = lemma2_check(in.truth, in.model, in.pi, in.s0);
    return BoundRow{i, rep.delta_j, rep.bound, rep.holds};
  });
}

std::vector<BoundRow> theorem1_sweep(std::size_t n, std::uint64_t seed) {
  return sweep(n, [&](std::size_t i) {
    Instance in = make_instance(seed, i);
    const std::size_t T = 5 + in.rng.index(60);
    const double beta_max = in.rng.uniform(0.0, 0.5);
    auto q = marginal_sequence(in.truth, in.pi, point_mass(in.truth.n_states, in.s0), T);
    for (auto& qt : q) {
      const double beta = in.rng.uniform(0.0, beta_max);
      auto u = random_distribution(qt.size(), in.rng);
      for (std::size_t j = 0; j < qt.size(); ++j) qt[j] = (1.0 - beta) * qt[j] + beta * u[j];
    }
    ReturnGapReport rep = theorem1_check(in.truth, in.pi, in.s0, q);
    return BoundRow{i, rep.delta_j, rep.bound, rep.holds};
  });
}

std::vector<MseRow> rollout_mse_curve(const Environment& env, const TransitionModel& dyn_model,
                                      const DiffusionSampler* diffusion, const Policy& policy,
                                      const std::vector<std::size_t>& horizons, ConstMatrixRef starts,
                                      std::uint64_t seed) {
  if (horizons.empty()) throw ConfigError("rollout_mse_curve: no horizons");
  if (starts.rows == 0) throw ConfigError("rollout_mse_curve: no start states");
  const std::size_t S = env.state_dim(), A = env.action_dim(), n = starts.rows;
  if (starts.cols != S) throw DimensionError("rollout_mse_curve: start state dim mismatch");
  const std::size_t H = *std::max_element(horizons.begin(), horizons.end());
  std::size_t L = 0;
  if (diffusion != nullptr) {
    L = diffusion->layout.horizon;
    if (diffusion->layout.state_dim != S || diffusion->layout.action_dim != A)
      throw DimensionError("rollout_mse_curve: denoiser layout does not match the environment");
    if (H > L) throw ConfigError("rollout_mse_curve: horizon exceeds the diffusion window length");
    if (diffusion->denoiser == nullptr || !diffusion->normalizer.defined)
      throw ConfigError("rollout_mse_curve: incomplete diffusion sampler");
  }

  EnvTransition real_dyn(env);
  RolloutBatch truth = autoregressive_rollout_batch(real_dyn, policy, starts, std::max(H, L));
  RolloutBatch model = autoregressive_rollout_batch(dyn_model, policy, starts, H);
  for (std::size_t i = 0; i < n; ++i) {
    if (truth.failed_step[i] >= 0)
      throw NumericError("rollout_mse_curve: real rollout went non-finite at step " +
                         std::to_string(truth.failed_step[i]));
    if (model.failed_step[i] >= 0)
      throw NumericError("rollout_mse_curve: model rollout went non-finite at step " +
                         std::to_string(model.failed_step[i]));
  }

  std::vector<Matrix> diff_states;
  if (diffusion != nullptr) {
    Matrix s0n(n, S), an(n, L * A);
    std::vector<Rng> rngs;
    rngs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto z = diffusion->normalizer.normalize_state(starts.row(i));
      std::copy(z.begin(), z.end(), s0n.row(i).begin());
      for (std::size_t j = 0; j < L; ++j) {
        auto za = diffusion->normalizer.normalize_action(truth.trajectories[i].actions.row(j));
        std::copy(za.begin(), za.end(), an.row(i).begin() + static_cast<std::ptrdiff_t>(j * A));
      }
      rngs.emplace_back(seed, std::initializer_list<std::uint64_t>{0x3a, i});
    }
    SampleBatch sample = sample_batch(*diffusion->denoiser, make_conditioning(diffusion->layout, s0n, an),
                                      diffusion->schedule, diffusion->sampler, rngs);
    for (std::size_t i = 0; i < n; ++i) {
      if (sample.failed_step[i] >= 0)
        throw NumericError("rollout_mse_curve: diffusion sample went non-finite at sampler step " +
                           std::to_string(sample.failed_step[i]));
      Matrix states, actions;
      tensor_to_trajectory(diffusion->layout, sample.trajectories.row(i), diffusion->normalizer, states, actions);
      diff_states.push_back(std::move(states));
    }
  }

  auto sq_err = [&](const Matrix& states, std::size_t i, std::size_t h) {
    auto a = states.row(h);
    auto b = truth.trajectories[i].states.row(h);
    double acc = 0.0;
    for (std::size_t d = 0; d < S; ++d) acc += (a[d] - b[d]) * (a[d] - b[d]);
    return acc / static_cast<double>(S);
  };

  std::vector<MseRow> rows;
  for (std::size_t h : horizons) {
    MseRow row;
    row.horizon = h;
    row.mse_diffusion = diffusion ? 0.0 : std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < n; ++i) {
      row.mse_autoregressive += sq_err(model.trajectories[i].states, i, h);
      if (diffusion) row.mse_diffusion += sq_err(diff_states[i], i, h);
    }
    row.mse_autoregressive /= static_cast<double>(n);
    if (diffusion) row.mse_diffusion /= static_cast<double>(n);
    rows.push_back(row);
  }
  return rows;
}

std::string mse_csv(const std::vector<MseRow>& rows, std::size_t n_starts, std::uint64_t seed) {
  std::string out = "horizon,mse_autoregressive,mse_diffusion,n_starts,seed\n";
  for (const auto& r : rows)
    out += csv_join({std::to_string(r.horizon), csv_number(r.mse_autoregressive), csv_number(r.mse_diffusion),
                     std::to_string(n_starts), std::to_string(seed)}) +
           "\n";
  return out;
}

}  // namespace dydiff
