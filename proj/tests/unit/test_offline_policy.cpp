#include <cmath>

#include "doctest.h"
#include "dydiff/error.hpp"
#include "dydiff/offline_policy.hpp"

using namespace dydiff;

namespace {

Dataset small_dataset(std::size_t episodes = 6, std::uint64_t seed = 1) {
  PointMass env;
  CollectionRecipe recipe;
  recipe.quality_mix = {{1.0, 0.5}, {0.2, 0.5}};
  recipe.num_episodes = episodes;
  recipe.seed = seed;
  return collect_dataset(env, recipe);
}

Td3BcConfig tiny_config() {
  Td3BcConfig c;
  c.hidden = {16, 16};
  return c;
}

TransitionBatch first_rows(const TransitionBatch& tb, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return {take_rows(tb.states, idx), take_rows(tb.actions, idx),
          std::vector<double>(tb.rewards.begin(), tb.rewards.begin() + static_cast<std::ptrdiff_t>(n)),
          take_rows(tb.next_states, idx),
          std::vector<double>(tb.dones.begin(), tb.dones.begin() + static_cast<std::ptrdiff_t>(n))};
}

class ZeroHorizonEnv final : public Environment {
 public:
  std::string name() const override { return "stub"; }
  std::size_t state_dim() const override { return 4; }
  std::size_t action_dim() const override { return 2; }
  double action_bound() const override { return 1.0; }
  std::size_t horizon() const override { return 0; }
  double reward_bound() const override { return 1.0; }
  std::vector<double> initial_state(Rng&) const override { return {0, 0, 0, 0}; }
  StepResult step(std::span<const double> s, std::span<const double>) const override {
    return {std::vector<double>(s.begin(), s.end()), 1.0, false};
  }
};

class ThrowingModel final : public TransitionModel, public RewardFunction, public DenoisingFunction {
 public:
  Matrix predict_next(ConstMatrixRef, ConstMatrixRef) const override { throw Error("invoked"); }
  std::vector<double> reward(ConstMatrixRef, ConstMatrixRef) const override { throw Error("invoked"); }
  std::size_t width() const override { return 4 * 3 + 2 * 2; }
  Matrix denoise(ConstMatrixRef, std::span<const double>) const override { throw Error("invoked"); }
};

}  // namespace

TEST_SUITE("offline_policy") {

TEST_CASE("act") {
  Dataset ds = small_dataset();
  Td3BcAgent agent(4, 2, 1.0, ds.normalizer, tiny_config(), 3);
  std::fill(agent.actor.parameters().begin(), agent.actor.parameters().end(), 0.0);
  CHECK(agent.act(Matrix{{0.3, -1.0, 0.2, 0.1}}) == Matrix{{0.0, 0.0}});

  Td3BcAgent scaled(4, 2, 0.7, ds.normalizer, tiny_config(), 4);
  Matrix states(10000, 4);
  Rng rng(5);
  for (double& v : states.flat()) v = rng.normal() * 50.0;
  Matrix a = scaled.act(states);
  for (double v : a.flat()) CHECK(std::abs(v) <= 0.7);
  CHECK(scaled.act(states) == a);
}

TEST_CASE("critic targets") {
  Dataset ds = small_dataset();
  TransitionBatch tb = first_rows(flatten_transitions(ds), 32);
  Td3BcConfig cfg = tiny_config();
  cfg.discount = 0.0;
  Td3BcAgent myopic(4, 2, 1.0, ds.normalizer, cfg, 1);
  Rng rng(2);
  CHECK(critic_targets(myopic, tb, rng) == tb.rewards);

  Td3BcAgent agent(4, 2, 1.0, ds.normalizer, tiny_config(), 1);
  TransitionBatch done = tb;
  std::fill(done.dones.begin(), done.dones.end(), 1.0);
  CHECK(critic_targets(agent, done, rng) == done.rewards);
}

TEST_CASE("update: behaviour-cloning term, target tracking, NaN guard") {
  Dataset ds = small_dataset();
  TransitionBatch tb = first_rows(flatten_transitions(ds), 64);
  Td3BcConfig cfg = tiny_config();
  cfg.policy_delay = 1;
  Td3BcAgent agent(4, 2, 1.0, ds.normalizer, cfg, 1);
  Rng rng(3);

  SUBCASE("actor output equal to batch actions") {
    TransitionBatch own = tb;
    own.actions = agent.act(own.states);
    UpdateReport rep = td3bc_update(agent, own, rng);
    REQUIRE(rep.actor_updated);
    CHECK(rep.bc_loss == 0.0);
  }
  SUBCASE("polyak tracking is exact") {
    const double keep = 1.0 - cfg.tau;
    for (int step = 0; step < 3; ++step) {
      std::vector<double> old_target(agent.critic_target[1].parameters().begin(),
                                     agent.critic_target[1].parameters().end());
      std::vector<double> old_actor_target(agent.actor_target.parameters().begin(),
                                           agent.actor_target.parameters().end());
      td3bc_update(agent, tb, rng);
      auto online = agent.critic[1].parameters();
      auto target = agent.critic_target[1].parameters();
      for (std::size_t i = 0; i < target.size(); ++i) REQUIRE(target[i] == keep * old_target[i] + (1.0 - keep) * online[i]);
      auto a_on = agent.actor.parameters();
      auto a_t = agent.actor_target.parameters();
      for (std::size_t i = 0; i < a_t.size(); ++i)
        REQUIRE(a_t[i] == keep * old_actor_target[i] + (1.0 - keep) * a_on[i]);
    }
  }
  SUBCASE("policy delay") {
    Td3BcConfig delayed = tiny_config();
    Td3BcAgent d(4, 2, 1.0, ds.normalizer, delayed, 1);
    CHECK_FALSE(td3bc_update(d, tb, rng).actor_updated);
    CHECK(td3bc_update(d, tb, rng).actor_updated);
    CHECK(d.updates() == 2);
  }
  SUBCASE("non-finite losses abort") {
    TransitionBatch bad = tb;
    bad.rewards[3] = NAN;
    CHECK_THROWS_AS(td3bc_update(agent, bad, rng), NumericError);
  }
}

TEST_CASE("behaviour cloning anchor with lambda = 0") {
  Dataset ds = small_dataset();
  TransitionBatch tb = first_rows(flatten_transitions(ds), 10);
  Td3BcConfig cfg = tiny_config();
  cfg.fixed_lambda = 0.0;
  cfg.policy_delay = 1;
  Td3BcAgent agent(4, 2, 1.0, ds.normalizer, cfg, 8);
  Rng rng(1);
  auto bc_loss = [&] {
    Matrix a = agent.act(tb.states);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += std::pow(a.flat()[i] - tb.actions.flat()[i], 2);
    return total / 10.0;
  };
  double prev = bc_loss();
  const double start = prev;
  for (int step = 0; step < 100; ++step) {
    td3bc_update(agent, tb, rng);
    const double now = bc_loss();
    CHECK(now <= prev);
    prev = now;
  }
  CHECK(prev < start);
}

TEST_CASE("evaluate") {
  ZeroHorizonEnv stub;
  FunctionPolicy zero(2, [](std::span<const double>) { return std::vector<double>{0.0, 0.0}; });
  EvalResult r0 = evaluate(zero, stub, 3, 1);
  CHECK(r0.returns == std::vector<double>{0.0, 0.0, 0.0});

  PointMass env;
  GoalSeekingController ctl;
  FunctionPolicy det(2, [&](std::span<const double> s) {
    Rng unused(0);
    return ctl.act(s, 0.0, unused);
  });
  EvalResult r = evaluate(det, env, 10, 42);
  CHECK(r.returns.size() == 10);
  CHECK(r.stdev == 0.0);
  Rng rng(0);
  Episode ep = run_controller_episode(env, ctl, 0.0, rng);
  double direct = 0.0;
  for (double v : ep.rewards) direct += v;
  CHECK(r.mean == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("run_training") {
  Dataset ds = small_dataset(8, 2);
  PointMass env;
  PolicyTrainConfig cfg;
  cfg.agent = tiny_config();
  cfg.epochs = 3;
  cfg.updates_per_epoch = 20;
  cfg.batch_size = 32;
  cfg.eval_episodes = 2;
  cfg.seed = 7;
  RolloutConfig rc;
  rc.horizon = 3;
  rc.batch_size = 8;
  rc.rollout_period = 2;
  rc.iterations = 1;

  SUBCASE("baseline never invokes the components and is reproducible") {
    ThrowingModel boom;
    TrajectoryLayout layout{3, 4, 2};
    DiffusionSampler sampler{&boom, layout, ds.normalizer, NoiseSchedule{}, SamplerConfig{}};
    Components comps{&sampler, &boom, &boom, nullptr};
    rc.real_ratio = 1.0;
    TrainingResult a = run_training(ds, env, comps, rc, cfg);
    TrainingResult b = run_training(ds, env, Components{}, rc, cfg);
    CHECK(curve_csv(a.curve) == curve_csv(b.curve));
    CHECK(a.curve.size() == 3);
    CHECK(a.rollouts.empty());
    CHECK(a.final_score == doctest::Approx((a.curve[0].eval_return_mean + a.curve[1].eval_return_mean +
                                            a.curve[2].eval_return_mean) / 3.0));
  }
  SUBCASE("dydiff mode fills the synthetic buffer") {
    RegressionConfig wm;
    wm.epochs = 2;
    wm.hidden = {16};
    DynamicsFit dyn = train_dynamics(ds, wm);
    RewardFit rew = train_reward(ds, wm);
    DenoiserTrainConfig dc;
    dc.epochs = 1;
    dc.hidden = {16};
    EdmDenoiser den = train_denoiser(slice_windows(ds, 3), ds.normalizer, NoiseSchedule{}, dc);
    NoiseSchedule fast;
    fast.n_steps = 4;
    DiffusionSampler sampler{&den, den.layout(), ds.normalizer, fast, SamplerConfig{}};
    EnvTransition truth(env);
    Components comps{&sampler, &dyn.model, &rew.model, &truth};
    cfg.mode = TrainingMode::dydiff;
    TrainingResult r = run_training(ds, env, comps, rc, cfg);
    REQUIRE(r.rollouts.size() == 2);  // epochs 0 and 2
    CHECK(r.rollouts[0].n_generated == 8);
    CHECK(r.rollouts[0].n_filtered == 4);
    CHECK(r.curve[0].n_syn_transitions == 12);
    CHECK(r.curve[2].n_syn_transitions == 24);
    CHECK(std::isfinite(r.rollouts[0].mean_dyn_residual_kM));
    TrainingResult again = run_training(ds, env, comps, rc, cfg);
    CHECK(curve_csv(again.curve) == curve_csv(r.curve));

    RolloutConfig wrong = rc;
    wrong.horizon = 4;
    CHECK_THROWS_AS(run_training(ds, env, comps, wrong, cfg), DimensionError);
    CHECK_THROWS_AS(run_training(ds, env, Components{}, rc, cfg), ConfigError);
  }
}

TEST_CASE("learning curve csv and agent checkpoint") {
  EpochMetrics m;
  m.epoch = 4;
  m.mode = TrainingMode::dydiff;
  m.seed = 2;
  m.eval_return_mean = -12.5;
  m.eval_return_std = 0.0;
  m.critic_loss = 0.5;
  m.actor_loss = -1.0;
  m.bc_loss = 0.25;
  m.n_syn_transitions = 300;
  CHECK(curve_csv_header() ==
        "epoch,mode,seed,eval_return_mean,eval_return_std,critic_loss,actor_loss,bc_loss,n_syn_transitions");
  CHECK(curve_csv_row(m) == "4,dydiff,2,-12.5,0,0.5,-1,0.25,300");

  Dataset ds = small_dataset();
  Td3BcAgent agent(4, 2, 1.0, ds.normalizer, tiny_config(), 3);
  Td3BcAgent back = agent_from_json(nlohmann::json::parse(agent_to_json(agent).dump()));
  Matrix s{{0.1, 0.2, 0.3, 0.4}};
  CHECK(back.act(s) == agent.act(s));
  CHECK(back.q_value(1, s, Matrix{{0.5, -0.5}}) == agent.q_value(1, s, Matrix{{0.5, -0.5}}));
  auto doc = agent_to_json(agent);
  doc["format"] = "dydiff-td3bc-v0";
  CHECK_THROWS_AS(agent_from_json(doc), VersionError);
}

}  // TEST_SUITE
