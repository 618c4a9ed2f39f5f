#include <algorithm>
#include <cmath>
#include <numeric>
#include <iostream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dydiff/error.hpp"
#include "dydiff/log.hpp"
#include "dydiff/rollout.hpp"

using namespace dydiff;

namespace {

class ConstantModel final : public TransitionModel {
 public:
  explicit ConstantModel(std::vector<double> c) : c_(std::move(c)) {}
  Matrix predict_next(ConstMatrixRef s, ConstMatrixRef) const override {
    Matrix out(s.rows, c_.size());
    for (std::size_t r = 0; r < s.rows; ++r) std::copy(c_.begin(), c_.end(), out.row(r).begin());
    return out;
  }

 private:
  std::vector<double> c_;
};

// s' = s + a, but NaN once the first coordinate exceeds a threshold.
class BlowUpModel final : public TransitionModel {
 public:
  Matrix predict_next(ConstMatrixRef s, ConstMatrixRef a) const override {
    Matrix out(s.rows, s.cols);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) out(r, c) = s(r, 0) > 2.5 ? NAN : s(r, c) + a(r, c % a.cols);
    return out;
  }
};

class IndexReward final : public RewardFunction {
 public:
  std::vector<double> reward(ConstMatrixRef s, ConstMatrixRef) const override {
    std::vector<double> r(s.rows);
    for (std::size_t i = 0; i < s.rows; ++i) r[i] = s(i, 0);
    return r;
  }
};

Policy* unit_policy() {
  static FunctionPolicy p(1, [](std::span<const double>) { return std::vector<double>{1.0}; });
  return &p;
}

Normalizer identity_normalizer(std::size_t S, std::size_t A) {
  Normalizer n;
  n.defined = true;
  n.state_mean.assign(S, 0.0);
  n.state_std.assign(S, 1.0);
  n.action_mean.assign(A, 0.0);
  n.action_std.assign(A, 1.0);
  return n;
}

}  // namespace

TEST_SUITE("dydiff_rollout") {

TEST_CASE("autoregressive_rollout") {
  PointMass env;
  GoalSeekingController ctl;
  FunctionPolicy pi(2, [&](std::span<const double> s) {
    Rng unused(0);
    return ctl.act(s, 0.0, unused);
  });
  EnvTransition truth(env);
  std::vector<double> s0{-1.0, 0.5, 0.1, 0.0};
  Trajectory t = autoregressive_rollout(truth, pi, s0, 25);
  std::vector<double> s = s0;
  for (std::size_t i = 0; i < 25; ++i) {
    Rng unused(0);
    auto a = ctl.act(s, 0.0, unused);
    CHECK(std::equal(a.begin(), a.end(), t.actions.row(i).begin()));
    s = env.step(s, a).next_state;
    CHECK(std::equal(s.begin(), s.end(), t.states.row(i + 1).begin()));
  }

  Trajectory one = autoregressive_rollout(truth, pi, s0, 1);
  CHECK(one.states.rows() == 2);
  CHECK(one.actions.rows() == 1);

  Trajectory c = autoregressive_rollout(ConstantModel({7.0, 8.0, 9.0, 1.0}), pi, s0, 5);
  for (std::size_t i = 1; i <= 5; ++i) CHECK(c.states(i, 2) == 9.0);

  // states 0,1,2,3 are finite; predicting from s=3 > 2.5 produces NaN at step 3
  try {
    autoregressive_rollout(BlowUpModel(), *unit_policy(), std::vector<double>{0.0}, 6);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 3") != std::string::npos);
  }
  RolloutBatch b = autoregressive_rollout_batch(BlowUpModel(), *unit_policy(), Matrix{{0.0}, {-10.0}}, 6);
  CHECK(b.failed_step == std::vector<int>{3, -1});
  CHECK(b.trajectories[1].states(6, 0) == -4.0);
}

TEST_CASE("policy_relabel") {
  FunctionPolicy neg(1, [](std::span<const double> s) { return std::vector<double>{-s[0]}; });
  Matrix states{{1.0}, {2.0}};
  Matrix a = policy_relabel(neg, states);
  CHECK(a == Matrix{{-1.0}, {-2.0}});
  CHECK(policy_relabel(neg, states) == a);
  FunctionPolicy wrong(1, [](std::span<const double>) { return std::vector<double>{1.0, 2.0}; });
  CHECK_THROWS_AS(policy_relabel(wrong, states), DimensionError);
}

TEST_CASE("dydiff_generate") {
  const std::size_t L = 6, S = 2, A = 1;
  TrajectoryLayout layout{L, S, A};
  EdmDenoiser den = EdmDenoiser::init(layout, NoiseSchedule{}, {32, 32}, 5);
  DiffusionSampler ds{&den, layout, identity_normalizer(S, A), NoiseSchedule{}, SamplerConfig{}};
  ds.schedule.n_steps = 6;
  FunctionPolicy pi(1, [](std::span<const double> s) { return std::vector<double>{std::tanh(s[0] - 0.3 * s[1])}; });
  // s' = (s0 + 0.1 a, s1 + 0.1 s0)
  FunctionPolicy dummy(1, [](std::span<const double>) { return std::vector<double>{0.0}; });
  class Lin final : public TransitionModel {
   public:
    Matrix predict_next(ConstMatrixRef s, ConstMatrixRef a) const override {
      Matrix out(s.rows, 2);
      for (std::size_t r = 0; r < s.rows; ++r) {
        out(r, 0) = s(r, 0) + 0.1 * a(r, 0);
        out(r, 1) = s(r, 1) + 0.1 * s(r, 0);
      }
      return out;
    }
  } lin;
  Matrix s0(8, 2);
  Rng rng(9);
  for (double& v : s0.flat()) v = rng.normal();
  RolloutConfig cfg;
  cfg.horizon = L;

  SUBCASE("M = 0 is the autoregressive rollout") {
    cfg.iterations = 0;
    GenerateResult g = dydiff_generate(ds, lin, pi, s0, cfg, 1, 0, &lin);
    REQUIRE(g.trajectories.size() == 8);
    for (std::size_t b = 0; b < 8; ++b) {
      Trajectory ar = autoregressive_rollout(lin, pi, s0.row(b), L);
      CHECK(g.trajectories[b].states == ar.states);
      CHECK(g.trajectories[b].actions == ar.actions);
    }
    CHECK(g.mean_residual_k0 == 0.0);
    CHECK(g.mean_residual_kM == 0.0);
  }
  SUBCASE("M > 0 keeps s_0 exactly and is policy consistent") {
    cfg.iterations = 2;
    GenerateResult g = dydiff_generate(ds, lin, pi, s0, cfg, 1, 3, &lin);
    REQUIRE(g.trajectories.size() == 8);
    CHECK(g.failures == 0);
    for (std::size_t k = 0; k < g.trajectories.size(); ++k) {
      const Trajectory& t = g.trajectories[k];
      CHECK(std::equal(t.states.row(0).begin(), t.states.row(0).end(), s0.row(g.source_rows[k]).begin()));
      Matrix expect = pi.act(ConstMatrixRef{t.states.flat().data(), L, S});
      CHECK(expect == t.actions);
    }
    GenerateResult again = dydiff_generate(ds, lin, pi, s0, cfg, 1, 3, &lin);
    CHECK(again.trajectories[5].states == g.trajectories[5].states);
    GenerateResult other = dydiff_generate(ds, lin, pi, s0, cfg, 1, 4, &lin);
    CHECK_FALSE(other.trajectories[5].states == g.trajectories[5].states);
    CHECK(std::isfinite(g.mean_residual_kM));
  }
  SUBCASE("failing rows are skipped and counted") {
    class Poison final : public DenoisingFunction {
     public:
      explicit Poison(std::size_t w) : w_(w) {}
      std::size_t width() const override { return w_; }
      Matrix denoise(ConstMatrixRef x, std::span<const double>) const override {
        Matrix out(x);
        out(out.rows() > 2 ? 2 : 0, w_ - 1) = NAN;
        return out;
      }

     private:
      std::size_t w_;
    } poison(layout.width());
    DiffusionSampler bad = ds;
    bad.denoiser = &poison;
    cfg.iterations = 1;
    GenerateResult g = dydiff_generate(bad, lin, pi, s0, cfg, 1, 0);
    CHECK(g.failures == 1);
    CHECK(g.trajectories.size() == 7);
    CHECK(std::find(g.source_rows.begin(), g.source_rows.end(), 2u) == g.source_rows.end());
    CHECK(std::isnan(g.mean_residual_k0));
  }
  SUBCASE("dimension mismatch") {
    cfg.horizon = L + 1;
    CHECK_THROWS_AS(dydiff_generate(ds, lin, pi, s0, cfg, 1, 0), DimensionError);
  }
}

TEST_CASE("hardmax filter") {
  std::vector<double> r{1, 3, 2, 0};
  CHECK(filter_hardmax(r, 0.5) == std::vector<std::size_t>{1, 2});
  CHECK(filter_hardmax(r, 1.0) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(filter_hardmax(std::vector<double>(8, 1.0), 0.25) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(filter_hardmax(r, 0.0), ConfigError);

  std::ostringstream warnings;
  set_warning_stream(&warnings);
  CHECK(filter_hardmax(std::vector<double>{1.0, 2.0}, 0.4).empty());
  CHECK(warnings.str().find("= 0 trajectories") != std::string::npos);
  set_warning_stream(nullptr);

  // exhaustive comparison against a sort-based oracle, ties included
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + gen() % 40;
    std::vector<double> ret(n);
    for (double& v : ret) v = static_cast<double>(gen() % 6);
    const double eta = (1 + gen() % 100) / 100.0;
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t i = 0; i < n; ++i) keyed.push_back({-ret[i], i});
    std::sort(keyed.begin(), keyed.end());
    const std::size_t k = static_cast<std::size_t>(std::floor(eta * n + 1e-9));
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < k; ++i) expect.push_back(keyed[i].second);
    std::sort(expect.begin(), expect.end());
    auto got = filter_hardmax(ret, eta);
    REQUIRE(got == expect);
    double min_kept = 1e300, max_rejected = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
      const bool kept = std::binary_search(got.begin(), got.end(), i);
      (kept ? min_kept : max_rejected) = kept ? std::min(min_kept, ret[i]) : std::max(max_rejected, ret[i]);
    }
    if (!got.empty() && got.size() < n) CHECK(min_kept >= max_rejected);
  }
  set_warning_stream(&std::cerr);
}

TEST_CASE("softmax filter") {
  Rng rng(10);
  auto picked = filter_softmax(std::vector<double>{5, 1, 3, 2, 8, 0}, 0.5, rng);
  CHECK(picked.size() == 3);
  std::vector<std::size_t> sorted = picked;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());

  auto first_draw_freq = [](const std::vector<double>& ret, int trials, std::uint64_t seed) {
    std::vector<double> counts(ret.size(), 0.0);
    Rng r(seed);
    const double eta = 1.0 / static_cast<double>(ret.size());
    for (int t = 0; t < trials; ++t) counts[filter_softmax(ret, eta, r)[0]] += 1.0;
    return counts;
  };
  const int trials = 20000;
  auto within_3_sigma = [&](const std::vector<double>& counts, const std::vector<double>& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double sd = std::sqrt(trials * p[i] * (1 - p[i]));
      if (std::abs(counts[i] - trials * p[i]) > 3 * sd) return false;
    }
    return true;
  };
  CHECK(within_3_sigma(first_draw_freq({std::log(2.0), 0.0}, trials, 1), {2.0 / 3.0, 1.0 / 3.0}));
  CHECK(within_3_sigma(first_draw_freq({1.0, 1.0, 1.0, 1.0}, trials, 2), {0.25, 0.25, 0.25, 0.25}));
  // shift invariance of p_r: large returns do not overflow
  CHECK(within_3_sigma(first_draw_freq({1000.0 + std::log(2.0), 1000.0}, trials, 3), {2.0 / 3.0, 1.0 / 3.0}));
}

TEST_CASE("synthetic buffer") {
  SyntheticBuffer buf(100, 1, 1);
  Trajectory t{Matrix(11, 1), Matrix(10, 1)};
  for (std::size_t i = 0; i <= 10; ++i) t.states(i, 0) = static_cast<double>(i);
  CHECK(buffer_insert(buf, t, IndexReward()) == 10);
  CHECK(buf.size() == 10);
  std::vector<double> s(1), a(1), sn(1), s2(1), a2(1), sn2(1);
  double r = 0, r2 = 0;
  for (std::size_t i = 0; i + 1 < 10; ++i) {
    buf.get(i, s, a, r, sn);
    buf.get(i + 1, s2, a2, r2, sn2);
    CHECK(sn[0] == s2[0]);
    CHECK(r == s[0]);
  }

  SyntheticBuffer small(5, 1, 1);
  for (int i = 0; i < 10; ++i) small.insert(std::vector<double>{double(i)}, std::vector<double>{0.0}, 0.0,
                                            std::vector<double>{double(i + 1)});
  CHECK(small.size() == 5);
  CHECK(small.total_inserted() == 10);
  for (std::size_t i = 0; i < 5; ++i) {
    small.get(i, s, a, r, sn);
    CHECK(s[0] == 5.0 + i);
  }
  Rng rng(1);
  TransitionBatch tb = small.sample(200, rng);
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(tb.states(i, 0) >= 5.0);
    CHECK(tb.dones[i] == 0.0);
  }
}

TEST_CASE("sample_mixed") {
  TransitionBatch real{Matrix(50, 1, 1.0), Matrix(50, 1), std::vector<double>(50, 1.0), Matrix(50, 1),
                       std::vector<double>(50, 0.0)};
  SyntheticBuffer syn(10, 1, 1);
  Rng rng(4);
  TransitionBatch all_real = sample_mixed(real, syn, 0.6, 10, rng);
  CHECK(std::count(all_real.rewards.begin(), all_real.rewards.end(), 1.0) == 10);
  for (int i = 0; i < 5; ++i)
    syn.insert(std::vector<double>{2.0}, std::vector<double>{0.0}, 999.0, std::vector<double>{2.0});
  TransitionBatch mixed = sample_mixed(real, syn, 0.6, 10, rng);
  CHECK(std::count(mixed.rewards.begin(), mixed.rewards.end(), 1.0) == 6);
  CHECK(std::count(mixed.rewards.begin(), mixed.rewards.end(), 999.0) == 4);
  TransitionBatch only_real = sample_mixed(real, syn, 1.0, 10, rng);
  CHECK(std::count(only_real.rewards.begin(), only_real.rewards.end(), 1.0) == 10);
  TransitionBatch only_syn = sample_mixed(real, syn, 0.0, 7, rng);
  CHECK(std::count(only_syn.rewards.begin(), only_syn.rewards.end(), 999.0) == 7);
  CHECK(real_count(0.3, 10) == 3);
  CHECK(real_count(0.35, 10) == 4);
}

TEST_CASE("rollout diagnostics csv") {
  RolloutDiagnostics d{10, 64, 32, -1.5, 0.25, 0.125};
  CHECK(rollout_csv_header() ==
        "epoch,n_generated,n_filtered,mean_predicted_return,mean_dyn_residual_k0,mean_dyn_residual_kM");
  CHECK(rollout_csv_row(d) == "10,64,32,-1.5,0.25,0.125");
}

TEST_CASE("rollout config validation") {
  RolloutConfig c;
  CHECK_NOTHROW(c.validate());
  c.filter_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RolloutConfig{};
  c.real_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RolloutConfig{};
  c.horizon = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(filter_kind_from_string("hardmax") == FilterKind::hardmax);
  CHECK_THROWS_AS(filter_kind_from_string("argmax"), ConfigError);
}

}  // TEST_SUITE
