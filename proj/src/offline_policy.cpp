#include "dydiff/offline_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dydiff/csv.hpp"
#include "dydiff/error.hpp"

namespace dydiff {

void Td3BcConfig::validate() const {
  if (hidden.empty()) throw ConfigError("td3bc: at least one hidden layer is required");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("td3bc: hidden widths must be >= 1");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("td3bc: learning rates must be > 0");
  if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("td3bc: discount must be in [0, 1)");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("td3bc: tau must be in [0, 1]");
  if (policy_delay < 1) throw ConfigError("td3bc: policy_delay must be >= 1");
  if (!(policy_noise >= 0.0) || !(noise_clip >= 0.0)) throw ConfigError("td3bc: noise settings must be >= 0");
  if (!(bc_alpha >= 0.0)) throw ConfigError("td3bc: bc_alpha must be >= 0");
}

namespace {

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

void polyak(const Mlp& online, Mlp& target, double keep) {
  auto o = online.parameters();
  auto t = target.parameters();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = keep * t[i] + (1.0 - keep) * o[i];
}

void require_finite(double v, const char* what, std::uint64_t step) {
  if (!std::isfinite(v))
    throw NumericError(std::string("td3bc_update: non-finite ") + what + " at update " + std::to_string(step));
}

}  // namespace

Td3BcAgent::Td3BcAgent(std::size_t state_dim, std::size_t action_dim, double action_bound, Normalizer normalizer,
                       const Td3BcConfig& cfg, std::uint64_t seed)
    : state_dim_(state_dim), action_dim_(action_dim), action_bound_(action_bound),
      normalizer_(std::move(normalizer)), cfg_(cfg) {
  cfg_.validate();
  if (state_dim == 0 || action_dim == 0) throw DimensionError("Td3BcAgent: dims must be >= 1");
  if (!(action_bound > 0.0)) throw ConfigError("Td3BcAgent: action bound must be > 0");
  if (!normalizer_.defined || normalizer_.state_mean.size() != state_dim)
    throw DimensionError("Td3BcAgent: normalizer does not match the state dim");
  actor = Mlp::init(layer_sizes(state_dim, cfg.hidden, action_dim), Activation::relu, derive_seed(seed, {0xac}), true);
  actor_target = actor;
  for (std::size_t k = 0; k < 2; ++k) {
    critic[k] = Mlp::init(layer_sizes(state_dim + action_dim, cfg.hidden, 1), Activation::relu,
                          derive_seed(seed, {0xc0, k}));
    critic_target[k] = critic[k];
    critic_opt[k] = AdamState(critic[k].parameter_count(), AdamConfig{cfg.critic_lr});
  }
  actor_opt = AdamState(actor.parameter_count(), AdamConfig{cfg.actor_lr});
}

Matrix Td3BcAgent::act(ConstMatrixRef states) const {
  if (states.cols != state_dim_) throw DimensionError("Td3BcAgent::act: state dim");
  Matrix a = actor.forward(normalizer_.normalize_states(states));
  for (double& v : a.flat()) v *= action_bound_;
  return a;
}

Matrix Td3BcAgent::target_act(ConstMatrixRef states) const {
  Matrix a = actor_target.forward(normalizer_.normalize_states(states));
  for (double& v : a.flat()) v *= action_bound_;
  return a;
}

Matrix Td3BcAgent::critic_input(ConstMatrixRef states, ConstMatrixRef actions) const {
  if (states.cols != state_dim_ || actions.cols != action_dim_ || states.rows != actions.rows)
    throw DimensionError("Td3BcAgent: critic input dims");
  return hconcat(normalizer_.normalize_states(states), actions);
}

std::vector<double> Td3BcAgent::q_value(std::size_t k, ConstMatrixRef states, ConstMatrixRef actions,
                                        bool target) const {
  const Mlp& net = target ? critic_target[k] : critic[k];
  Matrix q = net.forward(critic_input(states, actions));
  return std::vector<double>(q.flat().begin(), q.flat().end());
}

std::vector<double> critic_targets(const Td3BcAgent& agent, const TransitionBatch& batch, Rng& rng) {
  const Td3BcConfig& cfg = agent.config();
  const double bound = agent.action_bound();
  Matrix next_a = agent.target_act(batch.next_states);
  for (double& v : next_a.flat()) {
    const double noise = std::clamp(cfg.policy_noise * bound * rng.normal(), -cfg.noise_clip * bound,
                                    cfg.noise_clip * bound);
    v = std::clamp(v + noise, -bound, bound);
  }
  const auto q1 = agent.q_value(0, batch.next_states, next_a, true);
  const auto q2 = agent.q_value(1, batch.next_states, next_a, true);
  std::vector<double> y(batch.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = batch.rewards[i] + cfg.discount * (1.0 - batch.dones[i]) * std::min(q1[i], q2[i]);
  return y;
}

UpdateReport td3bc_update(Td3BcAgent& agent, const TransitionBatch& batch, Rng& rng) {
  const std::size_t B = batch.size(), S = agent.state_dim(), A = agent.action_dim();
  if (B == 0) throw ConfigError("td3bc_update: empty batch");
  if (batch.states.cols() != S || batch.actions.cols() != A || batch.next_states.cols() != S ||
      batch.rewards.size() != B || batch.dones.size() != B)
    throw DimensionError("td3bc_update: batch dims do not match the agent");
  const Td3BcConfig& cfg = agent.cfg_;
  const double inv_b = 1.0 / static_cast<double>(B);

  UpdateReport rep;
  rep.critic_targets = critic_targets(agent, batch, rng);
  Matrix x = agent.critic_input(batch.states, batch.actions);
  for (std::size_t k = 0; k < 2; ++k) {
    MlpTape tape = agent.critic[k].forward_tape(x);
    Matrix up(B, 1);
    double loss = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      const double d = tape.output(i, 0) - rep.critic_targets[i];
      loss += d * d;
      up(i, 0) = 2.0 * d * inv_b;
    }
    rep.critic_loss += loss * inv_b;
    require_finite(rep.critic_loss, "critic loss", agent.updates_);
    MlpGradients g = agent.critic[k].backward(tape, up);
    adam_step(agent.critic_opt[k], agent.critic[k].parameters(), g.parameters);
  }
  ++agent.updates_;

  rep.actor_loss = std::numeric_limits<double>::quiet_NaN();
  rep.bc_loss = std::numeric_limits<double>::quiet_NaN();
  rep.lambda = std::numeric_limits<double>::quiet_NaN();
  if (agent.updates_ % cfg.policy_delay != 0) return rep;

  const double bound = agent.action_bound();
  Matrix xs = agent.normalizer().normalize_states(batch.states);
  MlpTape actor_tape = agent.actor.forward_tape(xs);
  Matrix pi = actor_tape.output;
  for (double& v : pi.flat()) v *= bound;
  MlpTape q_tape = agent.critic[0].forward_tape(hconcat(xs, pi));

  double mean_abs_q = 0.0, mean_q = 0.0, bc = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    mean_abs_q += std::abs(q_tape.output(i, 0)) * inv_b;
    mean_q += q_tape.output(i, 0) * inv_b;
    for (std::size_t c = 0; c < A; ++c) {
      const double d = pi(i, c) - batch.actions(i, c);
      bc += d * d * inv_b;
    }
  }
  const double lambda = cfg.fixed_lambda ? *cfg.fixed_lambda
                                         : cfg.bc_alpha / std::max(mean_abs_q, std::numeric_limits<double>::min());
  rep.lambda = lambda;
  rep.bc_loss = bc;
  rep.actor_loss = -lambda * mean_q + bc;
  require_finite(rep.actor_loss, "actor loss", agent.updates_);

  Matrix dq(B, 1, -lambda * inv_b);
  MlpGradients qg = agent.critic[0].backward(q_tape, dq);
  Matrix up(B, A);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t c = 0; c < A; ++c)
      up(i, c) = bound * (qg.input(i, S + c) + 2.0 * (pi(i, c) - batch.actions(i, c)) * inv_b);
  MlpGradients ag = agent.actor.backward(actor_tape, up);
  adam_step(agent.actor_opt, agent.actor.parameters(), ag.parameters);

  const double keep = 1.0 - cfg.tau;
  polyak(agent.actor, agent.actor_target, keep);
  for (std::size_t k = 0; k < 2; ++k) polyak(agent.critic[k], agent.critic_target[k], keep);
  rep.actor_updated = true;
  return rep;
}

EvalResult evaluate(const Policy& policy, const Environment& env, std::size_t n_episodes, std::uint64_t seed) {
  EvalResult out;
  out.returns.assign(n_episodes, 0.0);
  const auto n = static_cast<std::ptrdiff_t>(n_episodes);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    Rng rng(seed, {static_cast<std::uint64_t>(i)});
    std::vector<double> s = env.initial_state(rng);
    double total = 0.0;
    for (std::size_t t = 0; t < env.horizon(); ++t) {
      Matrix a = policy.act(ConstMatrixRef{s.data(), 1, s.size()});
      StepResult r = env.step(s, a.row(0));
      total += r.reward;
      s = std::move(r.next_state);
      if (r.done) break;
    }
    out.returns[static_cast<std::size_t>(i)] = total;
  }
  if (n_episodes == 0) return out;
  for (double r : out.returns) out.mean += r;
  out.mean /= static_cast<double>(n_episodes);
  for (double r : out.returns) out.stdev += (r - out.mean) * (r - out.mean);
  out.stdev = std::sqrt(out.stdev / static_cast<double>(n_episodes));
  return out;
}

std::string to_string(TrainingMode m) { return m == TrainingMode::baseline ? "baseline" : "dydiff"; }

TrainingMode training_mode_from_string(const std::string& name) {
  if (name == "baseline") return TrainingMode::baseline;
  if (name == "dydiff") return TrainingMode::dydiff;
  throw ConfigError("unknown mode '" + name + "' (expected baseline or dydiff)");
}

void PolicyTrainConfig::validate() const {
  agent.validate();
  if (epochs < 1) throw ConfigError("policy training: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("policy training: batch_size must be >= 1");
}

TrainingResult run_training(const Dataset& ds, const Environment& env, const Components& components,
                            const RolloutConfig& rollout_cfg, const PolicyTrainConfig& cfg) {
  cfg.validate();
  validate_dataset(ds);
  const std::size_t S = ds.state_dim, A = ds.action_dim;
  if (env.state_dim() != S || env.action_dim() != A)
    throw DimensionError("run_training: environment dims do not match the dataset");
  if (ds.num_transitions() == 0) throw ConfigError("run_training: empty dataset");
  const bool augment = cfg.mode == TrainingMode::dydiff;
  if (augment) {
    rollout_cfg.validate();
    if (!components.dynamics || !components.reward)
      throw ConfigError("run_training: dydiff mode needs dynamics and reward models");
    if (rollout_cfg.iterations > 0) {
      if (!components.diffusion || !components.diffusion->denoiser)
        throw ConfigError("run_training: dydiff mode with M > 0 needs a denoiser");
      const TrajectoryLayout& l = components.diffusion->layout;
      if (l.state_dim != S || l.action_dim != A || l.horizon != rollout_cfg.horizon ||
          components.diffusion->denoiser->width() != l.width())
        throw DimensionError("run_training: denoiser (L, S, A) does not match the dataset and rollout length");
    }
  }

  TrainingResult result;
  result.agent = Td3BcAgent(S, A, env.action_bound(), ds.normalizer, cfg.agent, derive_seed(cfg.seed, {0xa9}));
  Td3BcAgent& agent = result.agent;
  const TransitionBatch real = flatten_transitions(ds);
  SyntheticBuffer syn(augment ? rollout_cfg.buffer_capacity : 1, S, A);
  const double alpha = augment ? rollout_cfg.real_ratio : 1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (augment && epoch % rollout_cfg.rollout_period == 0) {
      Rng srng(cfg.seed, {0x50, epoch});
      Matrix s0(rollout_cfg.batch_size, S);
      for (std::size_t r = 0; r < s0.rows(); ++r) {
        auto src = real.states.row(srng.index(real.size()));
        std::copy(src.begin(), src.end(), s0.row(r).begin());
      }
      DiffusionSampler none;
      const DiffusionSampler& diff = components.diffusion ? *components.diffusion : none;
      GenerateResult gen = dydiff_generate(diff, *components.dynamics, agent, s0, rollout_cfg, cfg.seed, epoch,
                                           components.residual_reference);
      std::vector<double> returns;
      for (const Trajectory& t : gen.trajectories)
        returns.push_back(trajectory_return(*components.reward, t.states, t.actions));
      std::vector<std::size_t> keep;
      if (!returns.empty()) {
        Rng frng(cfg.seed, {0xf1, epoch});
        keep = rollout_cfg.filter == FilterKind::hardmax ? filter_hardmax(returns, rollout_cfg.filter_fraction)
                                                         : filter_softmax(returns, rollout_cfg.filter_fraction, frng);
      }
      double kept_return = 0.0;
      for (std::size_t k : keep) {
        buffer_insert(syn, gen.trajectories[k], *components.reward);
        kept_return += returns[k];
      }
      result.rollouts.push_back({epoch, gen.trajectories.size(), keep.size(),
                                 keep.empty() ? std::numeric_limits<double>::quiet_NaN()
                                              : kept_return / static_cast<double>(keep.size()),
                                 gen.mean_residual_k0, gen.mean_residual_kM});
    }

    Rng urng(cfg.seed, {0xb0, epoch});
    double critic = 0.0, actor = 0.0, bc = 0.0;
    std::size_t actor_steps = 0;
    for (std::size_t u = 0; u < cfg.updates_per_epoch; ++u) {
      TransitionBatch batch = sample_mixed(real, syn, alpha, cfg.batch_size, urng);
      UpdateReport rep = td3bc_update(agent, batch, urng);
      critic += rep.critic_loss;
      if (rep.actor_updated) {
        actor += rep.actor_loss;
        bc += rep.bc_loss;
        ++actor_steps;
      }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EvalResult ev = evaluate(agent, env, cfg.eval_episodes, derive_seed(cfg.seed, {0xe7, epoch}));
    EpochMetrics m;
    m.epoch = epoch;
    m.mode = cfg.mode;
    m.seed = cfg.seed;
    m.eval_return_mean = ev.mean;
    m.eval_return_std = ev.stdev;
    m.critic_loss = cfg.updates_per_epoch ? critic / static_cast<double>(cfg.updates_per_epoch) : nan;
    m.actor_loss = actor_steps ? actor / static_cast<double>(actor_steps) : nan;
    m.bc_loss = actor_steps ? bc / static_cast<double>(actor_steps) : nan;
    m.n_syn_transitions = augment ? syn.size() : 0;
    result.curve.push_back(m);
  }

  const std::size_t tail = std::min<std::size_t>(5, result.curve.size());
  for (std::size_t i = result.curve.size() - tail; i < result.curve.size(); ++i)
    result.final_score += result.curve[i].eval_return_mean / static_cast<double>(tail);
  return result;
}

std::string curve_csv_header() {
  return "epoch,mode,seed,eval_return_mean,eval_return_std,critic_loss,actor_loss,bc_loss,n_syn_transitions";
}

std::string curve_csv_row(const EpochMetrics& m) {
  return csv_join({std::to_string(m.epoch), to_string(m.mode), std::to_string(m.seed), csv_number(m.eval_return_mean),
                   csv_number(m.eval_return_std), csv_number(m.critic_loss), csv_number(m.actor_loss),
                   csv_number(m.bc_loss), std::to_string(m.n_syn_transitions)});
}

std::string curve_csv(const std::vector<EpochMetrics>& curve) {
  std::string out = curve_csv_header() + "\n";
  for (const auto& m : curve) out += curve_csv_row(m) + "\n";
  return out;
}

nlohmann::json agent_to_json(const Td3BcAgent& agent) {
  const Td3BcConfig& c = agent.config();
  nlohmann::json cfg = {{"hidden", c.hidden},           {"actor_lr", c.actor_lr},   {"critic_lr", c.critic_lr},
                        {"discount", c.discount},       {"tau", c.tau},             {"policy_delay", c.policy_delay},
                        {"policy_noise", c.policy_noise}, {"noise_clip", c.noise_clip}, {"bc_alpha", c.bc_alpha}};
  return {{"format", "dydiff-td3bc-v1"},
          {"kind", "td3bc"},
          {"state_dim", agent.state_dim()},
          {"action_dim", agent.action_dim()},
          {"action_bound", agent.action_bound()},
          {"updates", agent.updates()},
          {"config", cfg},
          {"normalizer", normalizer_to_json(agent.normalizer())},
          {"actor", mlp_to_json(agent.actor)},
          {"actor_target", mlp_to_json(agent.actor_target)},
          {"critic", {mlp_to_json(agent.critic[0]), mlp_to_json(agent.critic[1])}},
          {"critic_target", {mlp_to_json(agent.critic_target[0]), mlp_to_json(agent.critic_target[1])}}};
}

Td3BcAgent agent_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "dydiff-td3bc-v1")
      throw VersionError("agent checkpoint: unsupported format '" + doc.at("format").get<std::string>() + "'");
    const auto& c = doc.at("config");
    Td3BcConfig cfg;
    cfg.hidden = c.at("hidden").get<std::vector<std::size_t>>();
    cfg.actor_lr = c.at("actor_lr").get<double>();
    cfg.critic_lr = c.at("critic_lr").get<double>();
    cfg.discount = c.at("discount").get<double>();
    cfg.tau = c.at("tau").get<double>();
    cfg.policy_delay = c.at("policy_delay").get<std::size_t>();
    cfg.policy_noise = c.at("policy_noise").get<double>();
    cfg.noise_clip = c.at("noise_clip").get<double>();
    cfg.bc_alpha = c.at("bc_alpha").get<double>();
    Td3BcAgent agent(doc.at("state_dim").get<std::size_t>(), doc.at("action_dim").get<std::size_t>(),
                     doc.at("action_bound").get<double>(), normalizer_from_json(doc.at("normalizer")), cfg, 0);
    auto load = [](Mlp& dst, const nlohmann::json& j) {
      Mlp m = mlp_from_json(j);
      if (m.layer_sizes() != dst.layer_sizes()) throw DimensionError("agent checkpoint: network shape mismatch");
      dst = std::move(m);
    };
    load(agent.actor, doc.at("actor"));
    load(agent.actor_target, doc.at("actor_target"));
    for (std::size_t k = 0; k < 2; ++k) {
      load(agent.critic[k], doc.at("critic").at(k));
      load(agent.critic_target[k], doc.at("critic_target").at(k));
    }
    return agent;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("agent checkpoint: ") + e.what());
  }
}

}  // namespace dydiff
