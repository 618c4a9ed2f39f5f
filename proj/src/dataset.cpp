#include "dydiff/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dydiff/error.hpp"

namespace dydiff {

namespace {

constexpr const char* kDatasetFormat = "dydiff-ds-v1";

std::vector<double> affine(std::span<const double> v, const std::vector<double>& mean,
                           const std::vector<double>& std, bool inverse) {
  if (v.size() != mean.size()) throw DimensionError("Normalizer: dimension mismatch");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = inverse ? v[i] * std[i] + mean[i] : (v[i] - mean[i]) / std[i];
  return out;
}

Matrix affine_rows(ConstMatrixRef m, const std::vector<double>& mean, const std::vector<double>& std) {
  if (m.cols != mean.size()) throw DimensionError("Normalizer: dimension mismatch");
  Matrix out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) out(r, c) = (m(r, c) - mean[c]) / std[c];
  return out;
}

struct RunningStats {
  explicit RunningStats(std::size_t dim) : sum(dim, 0.0), sum_sq(dim, 0.0) {}
  void add(std::span<const double> v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      sum[i] += v[i];
      sum_sq[i] += v[i] * v[i];
    }
    ++count;
  }
  void finish(std::vector<double>& mean, std::vector<double>& std) const {
    mean.assign(sum.size(), 0.0);
    std.assign(sum.size(), 1.0);
    if (count == 0) return;
    const double n = static_cast<double>(count);
    for (std::size_t i = 0; i < sum.size(); ++i) {
      mean[i] = sum[i] / n;
      const double var = std::max(0.0, sum_sq[i] / n - mean[i] * mean[i]);
      std[i] = std::max(std::sqrt(var), Normalizer::kMinStd);
    }
  }
  std::vector<double> sum, sum_sq;
  std::size_t count = 0;
};

nlohmann::json matrix_rows(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_rows(const nlohmann::json& rows, std::size_t cols, const std::string& what) {
  Matrix m(0, cols);
  for (const auto& row : rows) {
    auto v = row.get<std::vector<double>>();
    if (v.size() != cols) throw DimensionError(what + ": row width " + std::to_string(v.size()) +
                                               " != " + std::to_string(cols));
    m.push_row(v);
  }
  return m;
}

}  // namespace

std::vector<double> Normalizer::normalize_state(std::span<const double> s) const {
  return affine(s, state_mean, state_std, false);
}
std::vector<double> Normalizer::denormalize_state(std::span<const double> z) const {
  return affine(z, state_mean, state_std, true);
}
std::vector<double> Normalizer::normalize_action(std::span<const double> a) const {
  return affine(a, action_mean, action_std, false);
}
std::vector<double> Normalizer::denormalize_action(std::span<const double> z) const {
  return affine(z, action_mean, action_std, true);
}
Matrix Normalizer::normalize_states(ConstMatrixRef s) const { return affine_rows(s, state_mean, state_std); }
Matrix Normalizer::normalize_actions(ConstMatrixRef a) const {
  return affine_rows(a, action_mean, action_std);
}

nlohmann::json normalizer_to_json(const Normalizer& n) {
  return {{"defined", n.defined},         {"state_mean", n.state_mean},
          {"state_std", n.state_std},     {"action_mean", n.action_mean},
          {"action_std", n.action_std},   {"reward_mean", n.reward_mean},
          {"reward_std", n.reward_std}};
}

Normalizer normalizer_from_json(const nlohmann::json& doc) {
  Normalizer n;
  n.defined = doc.at("defined").get<bool>();
  n.state_mean = doc.at("state_mean").get<std::vector<double>>();
  n.state_std = doc.at("state_std").get<std::vector<double>>();
  n.action_mean = doc.at("action_mean").get<std::vector<double>>();
  n.action_std = doc.at("action_std").get<std::vector<double>>();
  n.reward_mean = doc.at("reward_mean").get<double>();
  n.reward_std = doc.at("reward_std").get<double>();
  if (n.state_mean.size() != n.state_std.size() || n.action_mean.size() != n.action_std.size())
    throw DimensionError("normalizer: mean/std length mismatch");
  return n;
}

std::size_t Dataset::num_transitions() const {
  std::size_t n = 0;
  for (const auto& ep : episodes) n += ep.length();
  return n;
}

Normalizer compute_normalizer(const std::vector<Episode>& episodes, std::size_t state_dim,
                              std::size_t action_dim) {
  Normalizer n;
  RunningStats s(state_dim), a(action_dim), r(1);
  for (const auto& ep : episodes) {
    for (std::size_t t = 0; t < ep.states.rows(); ++t) s.add(ep.states.row(t));
    for (std::size_t t = 0; t < ep.actions.rows(); ++t) a.add(ep.actions.row(t));
    for (double rew : ep.rewards) r.add(std::span<const double>(&rew, 1));
  }
  s.finish(n.state_mean, n.state_std);
  a.finish(n.action_mean, n.action_std);
  std::vector<double> rm, rs;
  r.finish(rm, rs);
  n.reward_mean = rm[0];
  n.reward_std = rs[0];
  n.defined = a.count > 0;
  return n;
}

void validate_dataset(const Dataset& ds) {
  for (std::size_t i = 0; i < ds.episodes.size(); ++i) {
    const auto& ep = ds.episodes[i];
    const std::string where = "episode " + std::to_string(i);
    if (ep.states.cols() != ds.state_dim || ep.actions.cols() != ds.action_dim)
      throw DimensionError(where + ": state/action width does not match dataset dims");
    if (ep.states.rows() != ep.actions.rows() + 1)
      throw DimensionError(where + ": expected one more state than actions");
    if (ep.rewards.size() != ep.actions.rows())
      throw DimensionError(where + ": reward count does not match action count");
  }
  if (ds.normalizer.defined && (ds.normalizer.state_mean.size() != ds.state_dim ||
                                ds.normalizer.action_mean.size() != ds.action_dim))
    throw DimensionError("normalizer dims do not match dataset dims");
}

Episode run_controller_episode(const PointMass& env, const GoalSeekingController& controller,
                               double noise, Rng& rng) {
  Episode ep;
  std::vector<double> s = env.initial_state(rng);
  ep.states = Matrix(0, env.state_dim());
  ep.actions = Matrix(0, env.action_dim());
  ep.states.push_row(s);
  for (std::size_t t = 0; t < env.horizon(); ++t) {
    auto a = controller.act(s, noise, rng);
    StepResult res = env.step(s, a);
    ep.actions.push_row(a);
    ep.rewards.push_back(res.reward);
    ep.states.push_row(res.next_state);
    s = std::move(res.next_state);
    if (res.done) {
      ep.terminal = true;
      break;
    }
  }
  return ep;
}

Dataset collect_dataset(const PointMass& env, const CollectionRecipe& recipe) {
  double total = 0.0;
  for (const auto& q : recipe.quality_mix) {
    if (q.fraction < 0.0 || q.noise < 0.0) throw ConfigError("quality_mix: negative entry");
    total += q.fraction;
  }
  if (recipe.quality_mix.empty() || std::abs(total - 1.0) > 1e-9)
    throw ConfigError("quality_mix fractions must sum to 1 (got " + std::to_string(total) + ")");

  Dataset ds;
  ds.env_name = env.name();
  ds.state_dim = env.state_dim();
  ds.action_dim = env.action_dim();
  ds.episodes.resize(recipe.num_episodes);
  const std::size_t n = recipe.num_episodes;
  std::vector<double> levels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    double cum = 0.0;
    levels[i] = recipe.quality_mix.back().noise;
    for (const auto& q : recipe.quality_mix) {
      cum += q.fraction;
      if (u < cum) {
        levels[i] = q.noise;
        break;
      }
    }
  }
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(recipe.seed, {i});
    ds.episodes[i] = run_controller_episode(env, recipe.controller, levels[i], rng);
  }
  ds.normalizer = compute_normalizer(ds.episodes, ds.state_dim, ds.action_dim);

  auto mix = nlohmann::json::array();
  for (const auto& q : recipe.quality_mix) mix.push_back({{"noise", q.noise}, {"fraction", q.fraction}});
  ds.metadata = {{"recipe", "goal_seeking_controller"},
                 {"quality_mix", mix},
                 {"num_episodes", n},
                 {"seed", recipe.seed},
                 {"kp", recipe.controller.kp},
                 {"kd", recipe.controller.kd},
                 {"episode_noise", levels}};
  return ds;
}

std::string serialize_dataset(const Dataset& ds) {
  validate_dataset(ds);
  std::ostringstream out;
  nlohmann::json header = {{"format", kDatasetFormat},
                           {"env", ds.env_name},
                           {"state_dim", ds.state_dim},
                           {"action_dim", ds.action_dim},
                           {"num_episodes", ds.episodes.size()},
                           {"normalizer", normalizer_to_json(ds.normalizer)},
                           {"metadata", ds.metadata}};
  out << header.dump() << '\n';
  for (const auto& ep : ds.episodes) {
    nlohmann::json rec = {{"states", matrix_rows(ep.states)},
                          {"actions", matrix_rows(ep.actions)},
                          {"rewards", ep.rewards},
                          {"terminal", ep.terminal}};
    out << rec.dump() << '\n';
  }
  return out.str();
}

Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw FormatError("dataset: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: malformed header: ") + e.what());
  }
  Dataset ds;
  std::size_t expected = 0;
  try {
    const auto format = header.at("format").get<std::string>();
    if (format != kDatasetFormat)
      throw VersionError("dataset: format version '" + format + "' is not supported (reader is '" +
                         kDatasetFormat + "')");
    ds.env_name = header.at("env").get<std::string>();
    ds.state_dim = header.at("state_dim").get<std::size_t>();
    ds.action_dim = header.at("action_dim").get<std::size_t>();
    expected = header.at("num_episodes").get<std::size_t>();
    ds.normalizer = normalizer_from_json(header.at("normalizer"));
    ds.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset: bad header field: ") + e.what());
  }

  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::string where = "dataset record " + std::to_string(index);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": parse error: " + e.what());
    }
    Episode ep;
    try {
      ep.states = matrix_from_rows(rec.at("states"), ds.state_dim, where + " states");
      ep.actions = matrix_from_rows(rec.at("actions"), ds.action_dim, where + " actions");
      ep.rewards = rec.at("rewards").get<std::vector<double>>();
      ep.terminal = rec.at("terminal").get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (ep.states.rows() != ep.actions.rows() + 1 || ep.rewards.size() != ep.actions.rows())
      throw DimensionError(where + ": inconsistent states/actions/rewards lengths");
    ds.episodes.push_back(std::move(ep));
    ++index;
  }
  if (index != expected)
    throw FormatError("dataset record " + std::to_string(index) + ": missing (header declares " +
                      std::to_string(expected) + " episodes; file truncated?)");
  validate_dataset(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError("cannot open '" + path.string() + "' for writing");
  out << serialize_dataset(ds);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("dataset file '" + path.string() + "' not found");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

TransitionBatch flatten_transitions(const Dataset& ds) {
  TransitionBatch tb;
  const std::size_t n = ds.num_transitions();
  tb.states = Matrix(n, ds.state_dim);
  tb.actions = Matrix(n, ds.action_dim);
  tb.next_states = Matrix(n, ds.state_dim);
  tb.rewards.resize(n);
  tb.dones.resize(n);
  std::size_t k = 0;
  for (const auto& ep : ds.episodes) {
    for (std::size_t t = 0; t < ep.length(); ++t, ++k) {
      std::copy_n(ep.states.row(t).begin(), ds.state_dim, tb.states.row(k).begin());
      std::copy_n(ep.actions.row(t).begin(), ds.action_dim, tb.actions.row(k).begin());
      std::copy_n(ep.states.row(t + 1).begin(), ds.state_dim, tb.next_states.row(k).begin());
      tb.rewards[k] = ep.rewards[t];
      tb.dones[k] = (ep.terminal && t + 1 == ep.length()) ? 1.0 : 0.0;
    }
  }
  return tb;
}

}  // namespace dydiff
