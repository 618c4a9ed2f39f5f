#include "dydiff/experiment.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "dydiff/csv.hpp"
#include "dydiff/error.hpp"
#include "dydiff/theory_lab.hpp"
#include "dydiff/window.hpp"

namespace dydiff {

const char* const kVersion = "0.1.0";

namespace {

constexpr const char* kDiffusionFormat = "dydiff-diffusion-v1";
constexpr const char* kManifestFormat = "dydiff-manifest-v1";

using json = nlohmann::json;

// Strict conversions: a config value of the wrong JSON type is an error even
// when nlohmann would coerce it.
template <class T>
T convert(const json& v, const std::string& key);

template <>
double convert<double>(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

template <>
std::size_t convert<std::size_t>(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError("config key '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

template <>
bool convert<bool>(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
  return v.get<bool>();
}

template <>
std::string convert<std::string>(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

template <class T>
std::vector<T> convert_list(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("config key '" + key + "' must be an array");
  std::vector<T> out;
  for (const auto& e : v) out.push_back(convert<T>(e, key));
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, const json&, const std::string&)> set;
  std::function<json(const ExperimentConfig&)> get;
};

template <class T>
Field scalar(T ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const json& v, const std::string& k) { c.*m = convert<T>(v, k); },
          [m](const ExperimentConfig& c) { return json(c.*m); }};
}

template <class T>
Field list(std::vector<T> ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const json& v, const std::string& k) { c.*m = convert_list<T>(v, k); },
          [m](const ExperimentConfig& c) { return json(c.*m); }};
}

template <class S, class T>
Field nested(S ExperimentConfig::*outer, T S::*inner) {
  return {[=](ExperimentConfig& c, const json& v, const std::string& k) { (c.*outer).*inner = convert<T>(v, k); },
          [=](const ExperimentConfig& c) { return json((c.*outer).*inner); }};
}

const std::map<std::string, Field>& fields() {
  using C = ExperimentConfig;
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["env"] = scalar(&C::env);
    f["env_horizon"] = scalar(&C::env_horizon);
    f["start_jitter"] = scalar(&C::start_jitter);
    f["n_episodes"] = scalar(&C::n_episodes);
    f["quality_noise"] = list(&C::quality_noise);
    f["quality_fraction"] = list(&C::quality_fraction);
    f["dataset_path"] = scalar(&C::dataset_path);
    f["dynamics_path"] = scalar(&C::dynamics_path);
    f["reward_path"] = scalar(&C::reward_path);
    f["denoiser_path"] = scalar(&C::denoiser_path);
    f["world_epochs"] = scalar(&C::world_epochs);
    f["world_batch"] = scalar(&C::world_batch);
    f["world_hidden"] = list(&C::world_hidden);
    f["world_lr"] = scalar(&C::world_lr);
    f["holdout_fraction"] = scalar(&C::holdout_fraction);
    f["window_length"] = scalar(&C::window_length);
    f["diffusion_epochs"] = scalar(&C::diffusion_epochs);
    f["diffusion_batch"] = scalar(&C::diffusion_batch);
    f["diffusion_hidden"] = list(&C::diffusion_hidden);
    f["diffusion_lr"] = scalar(&C::diffusion_lr);
    f["diffusion_final_lr_fraction"] = scalar(&C::diffusion_final_lr_fraction);
    f["diffusion_clean_conditions"] = scalar(&C::diffusion_clean_conditions);
    f["sigma_min"] = nested(&C::schedule, &NoiseSchedule::sigma_min);
    f["sigma_max"] = nested(&C::schedule, &NoiseSchedule::sigma_max);
    f["sigma_data"] = nested(&C::schedule, &NoiseSchedule::sigma_data);
    f["rho"] = nested(&C::schedule, &NoiseSchedule::rho);
    f["n_steps"] = nested(&C::schedule, &NoiseSchedule::n_steps);
    f["p_mean"] = nested(&C::schedule, &NoiseSchedule::p_mean);
    f["p_std"] = nested(&C::schedule, &NoiseSchedule::p_std);
    f["s_churn"] = nested(&C::sampler, &SamplerConfig::s_churn);
    f["s_noise"] = nested(&C::sampler, &SamplerConfig::s_noise);
    f["s_tmin"] = nested(&C::sampler, &SamplerConfig::s_tmin);
    f["s_tmax"] = nested(&C::sampler, &SamplerConfig::s_tmax);
    f["policy_hidden"] = {[](C& c, const json& v, const std::string& k) { c.agent.hidden = convert_list<std::size_t>(v, k); },
                          [](const C& c) { return json(c.agent.hidden); }};
    f["actor_lr"] = nested(&C::agent, &Td3BcConfig::actor_lr);
    f["critic_lr"] = nested(&C::agent, &Td3BcConfig::critic_lr);
    f["discount"] = nested(&C::agent, &Td3BcConfig::discount);
    f["tau"] = nested(&C::agent, &Td3BcConfig::tau);
    f["policy_delay"] = nested(&C::agent, &Td3BcConfig::policy_delay);
    f["policy_noise"] = nested(&C::agent, &Td3BcConfig::policy_noise);
    f["noise_clip"] = nested(&C::agent, &Td3BcConfig::noise_clip);
    f["bc_alpha"] = nested(&C::agent, &Td3BcConfig::bc_alpha);
    f["bc_fixed_lambda"] = {[](C& c, const json& v, const std::string& k) {
                              if (v.is_null())
                                c.agent.fixed_lambda.reset();
                              else
                                c.agent.fixed_lambda = convert<double>(v, k);
                            },
                            [](const C& c) { return c.agent.fixed_lambda ? json(*c.agent.fixed_lambda) : json(nullptr); }};
    f["epochs"] = scalar(&C::epochs);
    f["updates_per_epoch"] = scalar(&C::updates_per_epoch);
    f["batch_size"] = scalar(&C::batch_size);
    f["eval_episodes"] = scalar(&C::eval_episodes);
    f["rollout_iterations"] = scalar(&C::rollout_iterations);
    f["rollout_batch"] = scalar(&C::rollout_batch);
    f["filter_fraction"] = scalar(&C::filter_fraction);
    f["filter"] = {[](C& c, const json& v, const std::string& k) {
                     try {
                       c.filter = filter_kind_from_string(convert<std::string>(v, k));
                     } catch (const Error& e) {
                       throw ConfigError(std::string("config key 'filter': ") + e.what());
                     }
                   },
                   [](const C& c) { return json(to_string(c.filter)); }};
    f["real_ratio"] = scalar(&C::real_ratio);
    f["rollout_period"] = scalar(&C::rollout_period);
    f["buffer_capacity"] = scalar(&C::buffer_capacity);
    f["seeds"] = list(&C::seeds);
    f["out_dir"] = scalar(&C::out_dir);
    f["bound_instances"] = scalar(&C::bound_instances);
    f["bound_horizon"] = scalar(&C::bound_horizon);
    f["mse_horizons"] = list(&C::mse_horizons);
    f["mse_starts"] = scalar(&C::mse_starts);
    return f;
  }();
  return table;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

void require_hidden(const std::vector<std::size_t>& h, const std::string& key) {
  require(!h.empty(), key + " must not be empty");
  for (auto w : h) require(w > 0, key + " entries must be positive");
}

std::string file_number(double v) { return csv_number(v); }

}  // namespace

void ExperimentConfig::validate() const {
  require(env == "pointmass", "env must be 'pointmass'");
  require(env_horizon > 0, "env_horizon must be positive");
  require(start_jitter >= 0.0, "start_jitter must be non-negative");
  require(n_episodes > 0, "n_episodes must be positive");
  require(!quality_noise.empty() && quality_noise.size() == quality_fraction.size(),
          "quality_noise and quality_fraction must be non-empty and the same length");
  double total = 0.0;
  for (std::size_t i = 0; i < quality_noise.size(); ++i) {
    require(quality_noise[i] >= 0.0, "quality_noise entries must be non-negative");
    require(quality_fraction[i] >= 0.0, "quality_fraction entries must be non-negative");
    total += quality_fraction[i];
  }
  require(std::abs(total - 1.0) <= 1e-9, "quality_fraction must sum to 1");
  require(world_epochs > 0 && world_batch > 0, "world_epochs and world_batch must be positive");
  require_hidden(world_hidden, "world_hidden");
  require(world_lr > 0.0, "world_lr must be positive");
  require(holdout_fraction >= 0.0 && holdout_fraction < 1.0, "holdout_fraction must be in [0, 1)");
  require(window_length > 0, "window_length must be positive");
  require(diffusion_epochs > 0 && diffusion_batch > 0, "diffusion_epochs and diffusion_batch must be positive");
  require_hidden(diffusion_hidden, "diffusion_hidden");
  require(diffusion_lr > 0.0, "diffusion_lr must be positive");
  require(diffusion_final_lr_fraction >= 0.0 && diffusion_final_lr_fraction <= 1.0,
          "diffusion_final_lr_fraction must be in [0, 1]");
  schedule.validate();
  sampler.validate();
  require_hidden(agent.hidden, "policy_hidden");
  rollout_config(*this).validate();
  policy_training(*this, TrainingMode::baseline, 0).validate();
  require(!seeds.empty(), "seeds must not be empty");
  require(!out_dir.empty(), "out_dir must not be empty");
  require(bound_instances > 0 && bound_horizon > 0, "bound_instances and bound_horizon must be positive");
  require(!mse_horizons.empty(), "mse_horizons must not be empty");
  for (auto h : mse_horizons) require(h <= window_length, "mse_horizons must not exceed window_length");
  require(mse_starts > 0, "mse_starts must be positive");
}

ExperimentConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  const auto& table = fields();
  for (const auto& [key, value] : doc.items()) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(cfg, value, key);
  }
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json doc = json::object();
  for (const auto& [key, field] : fields()) doc[key] = field.get(cfg);
  return doc;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("file '" + path.string() + "' not found");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = read_json(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(doc);
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg).dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError("cannot open '" + path.string() + "' for writing");
  out << text;
}

PointMass make_env(const ExperimentConfig& cfg) {
  PointMassConfig pm;
  pm.horizon = cfg.env_horizon;
  pm.start_jitter = cfg.start_jitter;
  return PointMass(pm);
}

CollectionRecipe make_recipe(const ExperimentConfig& cfg, std::uint64_t seed) {
  CollectionRecipe r;
  for (std::size_t i = 0; i < cfg.quality_noise.size(); ++i) r.quality_mix.push_back({cfg.quality_noise[i], cfg.quality_fraction[i]});
  r.num_episodes = cfg.n_episodes;
  r.seed = seed;
  return r;
}

RegressionConfig world_regression(const ExperimentConfig& cfg, std::uint64_t seed) {
  RegressionConfig r;
  r.epochs = cfg.world_epochs;
  r.batch_size = cfg.world_batch;
  r.seed = seed;
  r.hidden = cfg.world_hidden;
  r.adam.learning_rate = cfg.world_lr;
  r.holdout_fraction = cfg.holdout_fraction;
  return r;
}

DenoiserTrainConfig denoiser_training(const ExperimentConfig& cfg, std::uint64_t seed) {
  DenoiserTrainConfig d;
  d.epochs = cfg.diffusion_epochs;
  d.batch_size = cfg.diffusion_batch;
  d.seed = seed;
  d.hidden = cfg.diffusion_hidden;
  d.adam.learning_rate = cfg.diffusion_lr;
  d.final_lr_fraction = cfg.diffusion_final_lr_fraction;
  d.clean_conditions = cfg.diffusion_clean_conditions;
  return d;
}

RolloutConfig rollout_config(const ExperimentConfig& cfg) {
  RolloutConfig r;
  r.horizon = cfg.window_length;
  r.iterations = cfg.rollout_iterations;
  r.batch_size = cfg.rollout_batch;
  r.filter_fraction = cfg.filter_fraction;
  r.filter = cfg.filter;
  r.real_ratio = cfg.real_ratio;
  r.rollout_period = cfg.rollout_period;
  r.buffer_capacity = cfg.buffer_capacity;
  return r;
}

PolicyTrainConfig policy_training(const ExperimentConfig& cfg, TrainingMode mode, std::uint64_t seed) {
  PolicyTrainConfig p;
  p.agent = cfg.agent;
  p.mode = mode;
  p.epochs = cfg.epochs;
  p.updates_per_epoch = cfg.updates_per_epoch;
  p.batch_size = cfg.batch_size;
  p.eval_episodes = cfg.eval_episodes;
  p.seed = seed;
  return p;
}

json diffusion_checkpoint_to_json(const DiffusionCheckpoint& c) {
  return {{"format", kDiffusionFormat},
          {"denoiser", denoiser_to_json(c.denoiser)},
          {"normalizer", normalizer_to_json(c.normalizer)},
          {"sampler",
           {{"s_churn", c.sampler.s_churn},
            {"s_noise", c.sampler.s_noise},
            {"s_tmin", c.sampler.s_tmin},
            {"s_tmax", c.sampler.s_tmax}}}};
}

DiffusionCheckpoint diffusion_checkpoint_from_json(const json& doc) {
  try {
    const auto format = doc.at("format").get<std::string>();
    if (format != kDiffusionFormat) throw VersionError("diffusion checkpoint: unsupported format '" + format + "'");
    DiffusionCheckpoint c;
    c.denoiser = denoiser_from_json(doc.at("denoiser"));
    c.normalizer = normalizer_from_json(doc.at("normalizer"));
    const auto& s = doc.at("sampler");
    c.sampler.s_churn = s.at("s_churn").get<double>();
    c.sampler.s_noise = s.at("s_noise").get<double>();
    c.sampler.s_tmin = s.at("s_tmin").get<double>();
    c.sampler.s_tmax = s.at("s_tmax").get<double>();
    c.sampler.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("diffusion checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("diffusion checkpoint: ") + e.what());
  }
}

FunctionPolicy controller_policy(const GoalSeekingController& c) {
  return FunctionPolicy(2, [c](std::span<const double> s) {
    Rng unused(0);
    return c.act(s, 0.0, unused);
  });
}

ExperimentConfig apply_ablation(const ExperimentConfig& cfg, const std::string& axis, double value) {
  ExperimentConfig out = cfg;
  auto as_count = [&](std::size_t min) {
    if (!(value >= static_cast<double>(min)) || value != std::floor(value))
      throw ConfigError("ablation value " + csv_number(value) + " for axis " + axis + " must be an integer >= " +
                        std::to_string(min));
    return static_cast<std::size_t>(value);
  };
  if (axis == "M")
    out.rollout_iterations = as_count(0);
  else if (axis == "L") {
    out.window_length = as_count(1);
    for (auto& h : out.mse_horizons) h = std::min(h, out.window_length);
  } else if (axis == "eta")
    out.filter_fraction = value;
  else if (axis == "alpha")
    out.real_ratio = value;
  else
    throw ConfigError("unknown ablation axis '" + axis + "' (expected M, L, eta or alpha)");
  out.validate();
  return out;
}

Runner::Runner(ExperimentConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::filesystem::path Runner::output(const std::string& stem, std::uint64_t seed, const std::string& suffix) const {
  return out_dir() / (stem + "_" + std::to_string(seed) + suffix);
}

std::filesystem::path Runner::dataset_file(std::uint64_t seed) const {
  return cfg_.dataset_path.empty() ? output("gen-data", seed, ".jsonl") : std::filesystem::path(cfg_.dataset_path);
}
std::filesystem::path Runner::dynamics_file(std::uint64_t seed) const {
  return cfg_.dynamics_path.empty() ? output("train-world", seed, "_dynamics.json")
                                    : std::filesystem::path(cfg_.dynamics_path);
}
std::filesystem::path Runner::reward_file(std::uint64_t seed) const {
  return cfg_.reward_path.empty() ? output("train-world", seed, "_reward.json")
                                  : std::filesystem::path(cfg_.reward_path);
}
std::filesystem::path Runner::denoiser_file(std::uint64_t seed) const {
  return cfg_.denoiser_path.empty() ? output("train-diffusion", seed, ".json")
                                    : std::filesystem::path(cfg_.denoiser_path);
}

Dataset Runner::load_or_fail_dataset(std::uint64_t seed) const { return load_dataset(dataset_file(seed)); }

std::vector<std::filesystem::path> Runner::gen_data(std::uint64_t seed) const {
  Dataset ds = collect_dataset(make_env(cfg_), make_recipe(cfg_, seed));
  auto path = output("gen-data", seed, ".jsonl");
  std::filesystem::create_directories(out_dir());
  save_dataset(ds, path);
  return {path};
}

std::vector<std::filesystem::path> Runner::train_world(std::uint64_t seed) const {
  Dataset ds = load_or_fail_dataset(seed);
  DynamicsFit dyn = train_dynamics(ds, world_regression(cfg_, derive_seed(seed, {0x77, 0})));
  RewardFit rew = train_reward(ds, world_regression(cfg_, derive_seed(seed, {0x77, 1})));
  auto dyn_path = output("train-world", seed, "_dynamics.json");
  auto rew_path = output("train-world", seed, "_reward.json");
  auto csv_path = output("train-world", seed, ".csv");
  write_text(dyn_path, dynamics_to_json(dyn.model).dump() + "\n");
  write_text(rew_path, reward_to_json(rew.model).dump() + "\n");
  std::string csv = "model,train_mse,holdout_mse,train_size,holdout_size\n";
  for (auto [name, rep] : {std::pair{"dynamics", dyn.report}, std::pair{"reward", rew.report}})
    csv += csv_join({name, csv_number(rep.train_mse), csv_number(rep.holdout_mse), std::to_string(rep.train_size),
                     std::to_string(rep.holdout_size)}) +
           "\n";
  write_text(csv_path, csv);
  return {dyn_path, rew_path, csv_path};
}

namespace {

DiffusionCheckpoint fit_diffusion(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed,
                                  DenoiserTrainReport* report) {
  auto windows = slice_windows(ds, cfg.window_length);
  if (windows.empty()) throw ConfigError("dataset has no windows of length " + std::to_string(cfg.window_length));
  DiffusionCheckpoint c;
  c.denoiser = train_denoiser(windows, ds.normalizer, cfg.schedule, denoiser_training(cfg, derive_seed(seed, {0xdf})),
                              report);
  c.normalizer = ds.normalizer;
  c.sampler = cfg.sampler;
  return c;
}

std::string loss_csv(const DenoiserTrainReport& rep) {
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e)
    csv += std::to_string(e) + "," + csv_number(rep.epoch_loss[e]) + "\n";
  return csv;
}

DiffusionCheckpoint load_diffusion(const std::filesystem::path& path, std::size_t L) {
  DiffusionCheckpoint c = diffusion_checkpoint_from_json(read_json(path));
  if (c.denoiser.layout().horizon != L)
    throw DimensionError("denoiser checkpoint '" + path.string() + "' has window length " +
                         std::to_string(c.denoiser.layout().horizon) + ", config asks for " + std::to_string(L));
  return c;
}

}  // namespace

std::vector<std::filesystem::path> Runner::train_diffusion(std::uint64_t seed) const {
  Dataset ds = load_or_fail_dataset(seed);
  DenoiserTrainReport rep;
  DiffusionCheckpoint c = fit_diffusion(cfg_, ds, seed, &rep);
  auto ckpt = output("train-diffusion", seed, ".json");
  auto csv = output("train-diffusion", seed, ".csv");
  write_text(ckpt, diffusion_checkpoint_to_json(c).dump() + "\n");
  write_text(csv, loss_csv(rep));
  return {ckpt, csv};
}

TrainingResult Runner::run_policy(const ExperimentConfig& cfg, std::uint64_t seed, TrainingMode mode,
                                  const DiffusionCheckpoint* diffusion) const {
  Dataset ds = load_or_fail_dataset(seed);
  PointMass env = make_env(cfg);
  EnvTransition reference(env);
  Components comp;
  DynamicsModel dyn;
  RewardModel rew;
  DiffusionSampler sampler;
  if (mode == TrainingMode::dydiff) {
    dyn = dynamics_from_json(read_json(dynamics_file(seed)));
    rew = reward_from_json(read_json(reward_file(seed)));
    comp.dynamics = &dyn;
    comp.reward = &rew;
    comp.residual_reference = &reference;
    if (cfg.rollout_iterations > 0) {
      if (diffusion == nullptr) throw ConfigError("dydiff mode with M > 0 needs a denoiser");
      sampler = diffusion->sampler_view();
      comp.diffusion = &sampler;
    }
  }
  return run_training(ds, env, comp, rollout_config(cfg), policy_training(cfg, mode, seed));
}

namespace {

std::string rollout_csv(const std::vector<RolloutDiagnostics>& rows) {
  std::string csv = rollout_csv_header() + "\n";
  for (const auto& r : rows) csv += rollout_csv_row(r) + "\n";
  return csv;
}

}  // namespace

std::vector<std::filesystem::path> Runner::train_policy(std::uint64_t seed, TrainingMode mode) const {
  std::optional<DiffusionCheckpoint> diffusion;
  if (mode == TrainingMode::dydiff && cfg_.rollout_iterations > 0)
    diffusion = load_diffusion(denoiser_file(seed), cfg_.window_length);
  TrainingResult res = run_policy(cfg_, seed, mode, diffusion ? &*diffusion : nullptr);
  const std::string stem = "train-policy-" + to_string(mode);
  std::vector<std::filesystem::path> out{output(stem, seed, ".csv"), output(stem, seed, "_agent.json")};
  write_text(out[0], curve_csv(res.curve));
  write_text(out[1], agent_to_json(res.agent).dump() + "\n");
  if (mode == TrainingMode::dydiff) {
    out.push_back(output(stem, seed, "_rollouts.csv"));
    write_text(out.back(), rollout_csv(res.rollouts));
  }
  return out;
}

std::vector<std::filesystem::path> Runner::ablate(std::uint64_t seed, const std::string& axis,
                                                  const std::vector<double>& values) const {
  if (values.empty()) throw ConfigError("ablate needs at least one value");
  std::vector<ExperimentConfig> cfgs;
  for (double v : values) cfgs.push_back(apply_ablation(cfg_, axis, v));

  std::vector<std::filesystem::path> out;
  std::string summary = "axis,value,seed,final_score\n";
  std::optional<DiffusionCheckpoint> shared;
  std::optional<Dataset> ds;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const ExperimentConfig& c = cfgs[i];
    const std::string stem = "ablate-" + axis + "-" + file_number(values[i]);
    std::optional<DiffusionCheckpoint> own;
    const DiffusionCheckpoint* diffusion = nullptr;
    if (c.rollout_iterations > 0) {
      if (axis == "L") {
        // Each window length needs its own denoiser.
        if (!ds) ds = load_or_fail_dataset(seed);
        DenoiserTrainReport rep;
        own = fit_diffusion(c, *ds, seed, &rep);
        out.push_back(output(stem, seed, "_denoiser.json"));
        write_text(out.back(), diffusion_checkpoint_to_json(*own).dump() + "\n");
        diffusion = &*own;
      } else {
        if (!shared) shared = load_diffusion(denoiser_file(seed), cfg_.window_length);
        diffusion = &*shared;
      }
    }
    TrainingResult res = run_policy(c, seed, TrainingMode::dydiff, diffusion);
    out.push_back(output(stem, seed, ".csv"));
    write_text(out.back(), curve_csv(res.curve));
    summary += csv_join({axis, csv_number(values[i]), std::to_string(seed), csv_number(res.final_score)}) + "\n";
  }
  out.push_back(output("ablate-" + axis, seed, ".csv"));
  write_text(out.back(), summary);
  return out;
}

std::vector<std::filesystem::path> Runner::verify_bounds(std::uint64_t seed) const {
  const std::size_t n = cfg_.bound_instances;
  std::vector<std::pair<std::string, std::vector<BoundRow>>> reports{
      {"lemma1", lemma1_sweep(n, derive_seed(seed, {0xb1}), cfg_.bound_horizon)},
      {"lemma2", lemma2_sweep(n, derive_seed(seed, {0xb2}))},
      {"theorem1", theorem1_sweep(n, derive_seed(seed, {0xb3}))}};
  std::vector<std::filesystem::path> out;
  json summary = {{"format", "dydiff-bounds-v1"}, {"instances", n}, {"seed", seed}};
  for (const auto& [name, rows] : reports) {
    out.push_back(output("verify-bounds-" + name, seed, ".csv"));
    write_text(out.back(), bound_csv(rows));
    std::size_t holds = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) {
      holds += r.holds ? 1 : 0;
      min_slack = std::min(min_slack, r.rhs - r.lhs);
    }
    summary[name] = {{"holds", holds}, {"min_slack", min_slack}};
  }

  // Iterated-generation bound over a small grid of smoothness constants.
  std::string eq = "C,eps_sd,L,eps_m,k,bound\n";
  for (double C : {0.25, 0.5, 0.75, 1.0, 1.25})
    for (double eps_sd : {0.01, 0.1})
      for (std::size_t k = 0; k <= 10; ++k) {
        BoundParams p;
        p.C = C;
        p.eps_sd = eps_sd;
        p.L = 10;
        p.eps_m = 0.1;
        eq += csv_join({csv_number(C), csv_number(eps_sd), "10", "0.1", std::to_string(k),
                        csv_number(iterated_bound(p, k))}) +
              "\n";
      }
  out.push_back(output("verify-bounds-eq15", seed, ".csv"));
  write_text(out.back(), eq);
  out.push_back(output("verify-bounds", seed, ".json"));
  write_text(out.back(), summary.dump(2) + "\n");
  return out;
}

std::vector<std::filesystem::path> Runner::analyze_mse(std::uint64_t seed) const {
  Dataset ds = load_or_fail_dataset(seed);
  DynamicsModel dyn = dynamics_from_json(read_json(dynamics_file(seed)));
  DiffusionCheckpoint diffusion = load_diffusion(denoiser_file(seed), cfg_.window_length);
  DiffusionSampler sampler = diffusion.sampler_view();
  PointMass env = make_env(cfg_);
  FunctionPolicy pi = controller_policy(GoalSeekingController{});

  // Start states drawn uniformly from every state in the dataset.
  TransitionBatch flat = flatten_transitions(ds);
  Rng rng(seed, {0x5a});
  Matrix starts(cfg_.mse_starts, env.state_dim());
  for (std::size_t i = 0; i < cfg_.mse_starts; ++i) {
    auto src = flat.states.row(rng.index(flat.states.rows()));
    std::copy(src.begin(), src.end(), starts.row(i).begin());
  }
  auto rows = rollout_mse_curve(env, dyn, &sampler, pi, cfg_.mse_horizons, starts, derive_seed(seed, {0x5b}));
  auto csv = output("analyze-mse", seed, ".csv");
  auto meta = output("analyze-mse", seed, ".json");
  write_text(csv, mse_csv(rows, cfg_.mse_starts, seed));
  json m = {{"format", "dydiff-mse-v1"},
            {"policy", "noise-free behaviour controller"},
            {"start_states", "uniform over dataset states"},
            {"diffusion_conditioning", "first state and the true action sequence of the real rollout"},
            {"error", "squared state error averaged over state dimensions and starts, raw units"}};
  write_text(meta, m.dump(2) + "\n");
  return {csv, meta};
}

std::filesystem::path Runner::write_manifest(const std::string& command, const std::vector<std::uint64_t>& seeds,
                                             const json& options,
                                             const std::vector<std::filesystem::path>& outputs) const {
  json files = json::array();
  for (const auto& p : outputs) files.push_back(p.filename().string());
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json doc = {{"format", kManifestFormat},
              {"command", command},
              {"version", kVersion},
              {"formats",
               {{"dataset", "dydiff-ds-v1"},
                {"mlp", "dydiff-mlp-v1"},
                {"diffusion", kDiffusionFormat},
                {"agent", "dydiff-td3bc-v1"}}},
              {"config", config_to_json(cfg_)},
              {"config_hash", config_hash(cfg_)},
              {"seeds", seeds},
              {"options", options},
              {"outputs", files},
              {"created_utc", stamp}};
  auto path = out_dir() / (command + "_manifest.json");
  write_text(path, doc.dump(2) + "\n");
  return path;
}

}  // namespace dydiff
