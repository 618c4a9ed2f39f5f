#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dydiff/env.hpp"
#include "dydiff/matrix.hpp"
#include "dydiff/rng.hpp"
#include "dydiff/rollout.hpp"

namespace dydiff {

struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;  // [s][a][s'] flattened
  std::vector<double> reward;      // [s][a]
  double discount = 0.9;
  std::vector<double> initial;     // d_0
  double reward_bound = 1.0;       // R

  TabularMdp() = default;
  TabularMdp(std::size_t n_states, std::size_t n_actions, double discount, double reward_bound);

  double& p(std::size_t s, std::size_t a, std::size_t next) {
    return transition[(s * n_actions + a) * n_states + next];
  }
  double p(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[(s * n_actions + a) * n_states + next];
  }
  std::span<const double> row(std::size_t s, std::size_t a) const {
    return {transition.data() + (s * n_actions + a) * n_states, n_states};
  }
  double& r(std::size_t s, std::size_t a) { return reward[s * n_actions + a]; }
  double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }

  void validate() const;
};

// pi(a | s) as an n_states x n_actions row-stochastic matrix.
using TabularPolicy = Matrix;

void validate_policy(const TabularMdp& mdp, const TabularPolicy& pi);
// P_pi[s][s'] = sum_a pi(a|s) T(s'|s,a)
Matrix policy_transition(const TabularMdp& mdp, const TabularPolicy& pi);
std::vector<double> policy_reward(const TabularMdp& mdp, const TabularPolicy& pi);

std::vector<double> point_mass(std::size_t n, std::size_t s);
// Distribution of s_t when starting at s0 and following pi.
std::vector<double> exact_marginals(const TabularMdp& mdp, const TabularPolicy& pi, std::size_t s0, std::size_t t);
// Marginals for t = 0..horizon from an arbitrary start distribution.
std::vector<std::vector<double>> marginal_sequence(const TabularMdp& mdp, const TabularPolicy& pi,
                                                   std::span<const double> start, std::size_t horizon);

double tv_distance(std::span<const double> p, std::span<const double> q);

// max over t in [0, horizon] of E_{s ~ true marginal at t, a ~ pi}
// TV(T_model(.|s,a), T_true(.|s,a)).
double measure_eps_m(const TabularMdp& truth, const TabularMdp& model, const TabularPolicy& pi,
                     std::span<const double> start, std::size_t horizon);
double measure_eps_m(const TabularMdp& truth, const TabularMdp& model, const TabularPolicy& pi, std::size_t horizon);

struct MarginalGapRow {
  std::size_t t = 0;
  double lhs = 0.0;  // TV between model and true marginals at t
  double rhs = 0.0;  // t * eps_m
  bool holds = false;
};

struct Lemma1Report {
  double eps_m = 0.0;
  std::vector<MarginalGapRow> rows;
  bool holds = true;
};

Lemma1Report lemma1_check(const TabularMdp& truth, const TabularMdp& model, const TabularPolicy& pi,
                          std::size_t s0, std::size_t horizon);

// Discounted return from s0 by a linear solve of (I - gamma P_pi) v = r_pi.
double exact_return(const TabularMdp& mdp, const TabularPolicy& pi, std::size_t s0);

struct ReturnGapReport {
  double delta_j = 0.0;
  double bound = 0.0;
  double eps = 0.0;  // eps_m or eps_d, as measured
  bool holds = false;
};

double lemma2_bound(double gamma, double R, double eps_m);
double theorem1_bound(double gamma, double R, double eps_d);

// eps_m is measured over `horizon` steps, which must be long enough for the
// marginals to settle (the bound is over an infinite discounted sum).
ReturnGapReport lemma2_check(const TabularMdp& truth, const TabularMdp& model, const TabularPolicy& pi,
                             std::size_t s0, std::size_t horizon = 2000);

// The non-autoregressive model is given as marginals q_0..q_T of s_t; after T
// it coincides with the true process. Its return is
// sum_t gamma^t <q_t, r_pi>.
ReturnGapReport theorem1_check(const TabularMdp& truth, const TabularPolicy& pi, std::size_t s0,
                               const std::vector<std::vector<double>>& model_marginals);

struct BoundParams {
  double gamma = 0.99;
  double R = 1.0;
  double eps_m = 0.0;
  double eps_d = 0.0;
  double eps_sd = 0.0;
  double c_pi = 0.0;
  double c_ad = 0.0;
  double C = 0.0;  // c_ad * c_pi
  std::size_t L = 1;

  void validate() const;
};

// (1 - C^k)/(1 - C) eps_sd + C^k L eps_m; k eps_sd + L eps_m at C = 1.
double iterated_bound(const BoundParams& p, std::size_t k);

// Random instances for bound sweeps.
TabularMdp random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, double R, Rng& rng);
// Each T(.|s,a) mixed with a random distribution at weight beta.
TabularMdp perturb_mdp(const TabularMdp& mdp, double beta, Rng& rng);
TabularPolicy random_policy(std::size_t n_states, std::size_t n_actions, Rng& rng);
std::vector<double> random_distribution(std::size_t n, Rng& rng);

struct BoundRow {
  std::size_t instance_id = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};
std::string bound_csv(const std::vector<BoundRow>& rows);

// Sweeps over `n` random instances, one row per instance.
std::vector<BoundRow> lemma1_sweep(std::size_t n, std::uint64_t seed, std::size_t horizon = 20);
std::vector<BoundRow> lemma2_sweep(std::size_t n, std::uint64_t seed);
std::vector<BoundRow> theorem1_sweep(std::size_t n, std::uint64_t seed);

struct MseRow {
  std::size_t horizon = 0;
  double mse_autoregressive = 0.0;
  double mse_diffusion = 0.0;
};

// Per-horizon state MSE (mean over starts and state dims, raw units) of the
// autoregressive model rollout and of the conditional diffusion sample given
// the true action sequence, both against the real environment rollout of pi.
// Pass diffusion = nullptr to skip the diffusion column (NaN).
std::vector<MseRow> rollout_mse_curve(const Environment& env, const TransitionModel& dyn_model,
                                      const DiffusionSampler* diffusion, const Policy& policy,
                                      const std::vector<std::size_t>& horizons, ConstMatrixRef starts,
                                      std::uint64_t seed);
std::string mse_csv(const std::vector<MseRow>& rows, std::size_t n_starts, std::uint64_t seed);

}  // namespace dydiff
