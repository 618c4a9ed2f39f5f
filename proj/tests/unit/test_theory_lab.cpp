#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>

#include "doctest.h"
#include "dydiff/error.hpp"
#include "dydiff/theory_lab.hpp"

using namespace dydiff;

namespace {

TabularMdp two_cycle() {
  TabularMdp m(2, 1, 0.9, 1.0);
  m.p(0, 0, 1) = 1.0;
  m.p(1, 0, 0) = 1.0;
  return m;
}

TabularPolicy uniform_policy(std::size_t ns, std::size_t na) { return TabularPolicy(ns, na, 1.0 / na); }

// Eigen matrix powers instead of the library's step-by-step propagation.
double eps_m_by_powers(const TabularMdp& truth, const TabularMdp& model, const TabularPolicy& pi, std::size_t s0,
                       std::size_t horizon) {
  const auto n = static_cast<Eigen::Index>(truth.n_states);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t s = 0; s < truth.n_states; ++s)
    for (std::size_t a = 0; a < truth.n_actions; ++a)
      for (std::size_t j = 0; j < truth.n_states; ++j)
        P(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) += pi(s, a) * truth.p(s, a, j);
  double best = 0.0;
  for (std::size_t t = 0; t <= horizon; ++t) {
    Eigen::MatrixXd Pt = Eigen::MatrixXd::Identity(n, n);
    for (std::size_t k = 0; k < t; ++k) Pt = Pt * P;
    double e = 0.0;
    for (std::size_t s = 0; s < truth.n_states; ++s)
      for (std::size_t a = 0; a < truth.n_actions; ++a) {
        double tv = 0.0;
        for (std::size_t j = 0; j < truth.n_states; ++j) tv += std::abs(model.p(s, a, j) - truth.p(s, a, j));
        e += Pt(static_cast<Eigen::Index>(s0), static_cast<Eigen::Index>(s)) * pi(s, a) * 0.5 * tv;
      }
    best = std::max(best, e);
  }
  return best;
}

// Enumerates every (s_1, a_1, ..., s_t) path to get the visitation at t.
std::vector<double> marginal_by_paths(const TabularMdp& m, const TabularPolicy& pi, std::size_t s0, std::size_t t) {
  std::vector<double> out(m.n_states, 0.0);
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t s, std::size_t depth, double w) {
    if (depth == t) {
      out[s] += w;
      return;
    }
    for (std::size_t a = 0; a < m.n_actions; ++a)
      for (std::size_t j = 0; j < m.n_states; ++j) walk(j, depth + 1, w * pi(s, a) * m.p(s, a, j));
  };
  walk(s0, 0, 1.0);
  return out;
}

double truncated_return(const TabularMdp& m, const TabularPolicy& pi, std::size_t s0, std::size_t T) {
  std::vector<double> d = point_mass(m.n_states, s0);
  double J = 0.0, disc = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> next(m.n_states, 0.0);
    for (std::size_t s = 0; s < m.n_states; ++s)
      for (std::size_t a = 0; a < m.n_actions; ++a) {
        J += disc * d[s] * pi(s, a) * m.r(s, a);
        for (std::size_t j = 0; j < m.n_states; ++j) next[j] += d[s] * pi(s, a) * m.p(s, a, j);
      }
    d = next;
    disc *= m.discount;
  }
  return J;
}

}  // namespace

TEST_SUITE("theory_lab") {

TEST_CASE("tv distance examples") {
  std::vector<double> p{0.5, 0.5}, q{0.75, 0.25};
  CHECK(tv_distance(p, p) == 0.0);
  CHECK(tv_distance(p, q) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(tv_distance(point_mass(3, 0), point_mass(3, 2)) == 1.0);
  CHECK_THROWS_AS(tv_distance(p, point_mass(3, 0)), DimensionError);
}

TEST_CASE("exact marginals") {
  TabularMdp cyc = two_cycle();
  auto pi = uniform_policy(2, 1);
  CHECK(exact_marginals(cyc, pi, 0, 0) == point_mass(2, 0));
  CHECK(exact_marginals(cyc, pi, 0, 3) == point_mass(2, 1));

  TabularMdp u(4, 2, 0.9, 1.0);
  std::fill(u.transition.begin(), u.transition.end(), 0.25);
  auto pu = uniform_policy(4, 2);
  for (std::size_t t = 1; t < 6; ++t)
    for (double v : exact_marginals(u, pu, 2, t)) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    TabularMdp m = random_mdp(7, 3, 0.9, 1.0, rng);
    m.validate();
    auto pr = random_policy(7, 3, rng);
    for (const auto& d : marginal_sequence(m, pr, m.initial, 50)) {
      double sum = 0.0;
      for (double v : d) sum += v;
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("marginals agree with path enumeration") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    TabularMdp m = random_mdp(3, 2, 0.9, 1.0, rng);
    auto pi = random_policy(3, 2, rng);
    for (std::size_t t = 0; t <= 5; ++t) {
      auto a = exact_marginals(m, pi, 1, t);
      auto b = marginal_by_paths(m, pi, 1, t);
      for (std::size_t s = 0; s < 3; ++s) CHECK(a[s] == doctest::Approx(b[s]).epsilon(1e-12));
    }
  }
}

TEST_CASE("mdp validation") {
  TabularMdp m = two_cycle();
  m.validate();
  m.p(0, 0, 1) = 0.9;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = two_cycle();
  m.r(0, 0) = 2.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  CHECK_THROWS_AS(exact_marginals(two_cycle(), uniform_policy(3, 1), 0, 1), DimensionError);
}

TEST_CASE("eps_m measurement") {
  Rng rng(21);
  TabularMdp truth = random_mdp(10, 3, 0.9, 1.0, rng);
  auto pi = random_policy(10, 3, rng);
  CHECK(measure_eps_m(truth, truth, pi, 30) == 0.0);
  for (double beta : {0.01, 0.1, 0.3, 0.7}) {
    TabularMdp model = truth;
    for (std::size_t s = 0; s < 10; ++s)
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t j = 0; j < 10; ++j) model.p(s, a, j) = (1 - beta) * truth.p(s, a, j) + beta * 0.1;
    CHECK(measure_eps_m(truth, model, pi, 30) <= beta + 1e-15);
  }
  for (int trial = 0; trial < 25; ++trial) {
    TabularMdp t = random_mdp(10, 3, 0.9, 1.0, rng);
    TabularMdp m = perturb_mdp(t, rng.uniform(0.0, 0.5), rng);
    auto p = random_policy(10, 3, rng);
    const std::size_t s0 = rng.index(10);
    const double got = measure_eps_m(t, m, p, point_mass(10, s0), 12);
    CHECK(got == doctest::Approx(eps_m_by_powers(t, m, p, s0, 12)).epsilon(1e-12));
  }
}

TEST_CASE("lemma 1 on random instances") {
  Rng rng(3);
  TabularMdp truth = random_mdp(6, 2, 0.9, 1.0, rng);
  auto pi = random_policy(6, 2, rng);
  Lemma1Report same = lemma1_check(truth, truth, pi, 0, 20);
  CHECK(same.holds);
  for (const auto& r : same.rows) CHECK(r.lhs == 0.0);

  auto rows = lemma1_sweep(100, 1234, 20);
  REQUIRE(rows.size() == 100);
  for (const auto& r : rows) CHECK(r.holds);

  for (int trial = 0; trial < 20; ++trial) {
    TabularMdp t = random_mdp(8, 3, 0.9, 1.0, rng);
    TabularMdp m = perturb_mdp(t, 0.3, rng);
    auto p = random_policy(8, 3, rng);
    Lemma1Report rep = lemma1_check(t, m, p, 2, 20);
    REQUIRE(rep.rows.size() == 21);
    CHECK(rep.rows[0].lhs == 0.0);
    CHECK(rep.rows[1].lhs <= rep.eps_m + 1e-12);
  }
}

TEST_CASE("exact return") {
  Rng rng(8);
  TabularMdp zero = random_mdp(5, 2, 0.9, 1.0, rng);
  std::fill(zero.reward.begin(), zero.reward.end(), 0.0);
  CHECK(exact_return(zero, uniform_policy(5, 2), 3) == 0.0);

  TabularMdp absorbing(1, 2, 0.9, 1.0);
  std::fill(absorbing.transition.begin(), absorbing.transition.end(), 1.0);
  std::fill(absorbing.reward.begin(), absorbing.reward.end(), 1.0);
  CHECK(exact_return(absorbing, uniform_policy(1, 2), 0) == doctest::Approx(10.0).epsilon(1e-13));

  for (int trial = 0; trial < 20; ++trial) {
    const double gamma = rng.uniform(0.5, 0.99);
    TabularMdp m = random_mdp(9, 3, gamma, 1.0, rng);
    auto pi = random_policy(9, 3, rng);
    const double tail = std::pow(gamma, 1000.0) * m.reward_bound / (1.0 - gamma);
    CHECK(std::abs(exact_return(m, pi, 4) - truncated_return(m, pi, 4, 1000)) <= tail + 1e-10);
  }
}

TEST_CASE("return gap bounds") {
  CHECK(lemma2_bound(0.9, 1.0, 0.1) == doctest::Approx(18.0).epsilon(1e-14));
  CHECK(theorem1_bound(0.9, 1.0, 0.1) == doctest::Approx(2.0).epsilon(1e-14));

  for (auto rows : {lemma2_sweep(100, 77), theorem1_sweep(100, 77)}) {
    REQUIRE(rows.size() == 100);
    double min_slack = 1e300;
    for (const auto& r : rows) {
      CHECK(r.holds);
      min_slack = std::min(min_slack, r.rhs - r.lhs);
    }
    CHECK(min_slack >= 0.0);
  }

  // Identical marginals give no gap.
  Rng rng(4);
  TabularMdp m = random_mdp(5, 2, 0.9, 1.0, rng);
  auto pi = random_policy(5, 2, rng);
  auto q = marginal_sequence(m, pi, point_mass(5, 0), 10);
  ReturnGapReport rep = theorem1_check(m, pi, 0, q);
  CHECK(rep.eps <= 1e-15);
  CHECK(rep.delta_j <= 1e-12);
}

TEST_CASE("bound csv") {
  std::vector<BoundRow> rows{{0, 0.5, 2.0, true}, {1, 1.0, 0.25, false}};
  CHECK(bound_csv(rows) ==
        "instance_id,quantity_lhs,bound_rhs,slack,holds\n0,0.5,2,1.5,true\n1,1,0.25,-0.75,false\n");
}

TEST_CASE("iterated bound") {
  BoundParams p;
  p.C = 0.5;
  p.eps_sd = 0.01;
  p.L = 10;
  p.eps_m = 0.1;
  CHECK(iterated_bound(p, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(iterated_bound(p, 2) == doctest::Approx(0.265).epsilon(1e-14));
  CHECK(std::abs(iterated_bound(p, 1000) - p.eps_sd / (1.0 - p.C)) <= 1e-9);

  p.C = 1.0;
  CHECK(iterated_bound(p, 4) == doctest::Approx(0.04 + 1.0).epsilon(1e-15));

  // Decreasing when the fixed point is below L eps_m, increasing above it.
  for (double C : {0.1, 0.5, 0.9, 0.99})
    for (double sd : {0.001, 0.05, 0.2, 2.0}) {
      p.C = C;
      p.eps_sd = sd;
      const bool decreasing = sd / (1.0 - C) < p.L * p.eps_m;
      for (std::size_t k = 0; k < 10; ++k) {
        const double diff = iterated_bound(p, k + 1) - iterated_bound(p, k);
        if (decreasing)
          CHECK(diff < 0.0);
        else
          CHECK(diff > 0.0);
      }
    }

  p.eps_m = -1.0;
  CHECK_THROWS_AS(iterated_bound(p, 1), ConfigError);
}

}  // TEST_SUITE
