// dydiff command-line driver.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dydiff/error.hpp"
#include "dydiff/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitNumeric = 4;

int fail(int code, const std::string& kind, const std::string& msg) {
  std::string line = msg;
  for (auto& c : line)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "DYDIFF-ERR: " << kind << ": " << line << "\n";
  return code;
}

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string mode = "baseline";
  std::string axis;
  std::vector<double> values;
};

}  // namespace

int main(int argc, char** argv) {
  using namespace dydiff;
  CLI::App app{"dydiff: diffusion-corrected rollouts for offline RL, plus a tabular theory lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "flat JSON experiment config")->required();
    sub->add_option("--out", opt.out, "output directory (overrides out_dir)");
    sub->add_option("--seed", opt.seed, "run only this seed (overrides seeds)");
  };
  std::vector<CLI::App*> subs{
      app.add_subcommand("gen-data", "collect the point-mass dataset"),
      app.add_subcommand("train-world", "fit the dynamics and reward models"),
      app.add_subcommand("train-diffusion", "fit the trajectory denoiser"),
      app.add_subcommand("train-policy", "train TD3+BC in baseline or dydiff mode"),
      app.add_subcommand("ablate", "sweep one rollout knob in dydiff mode"),
      app.add_subcommand("verify-bounds", "check the tabular error bounds on random instances"),
      app.add_subcommand("analyze-mse", "state MSE against horizon, model rollout vs diffusion")};
  for (auto* s : subs) add_common(s);
  subs[3]->add_option("--mode", opt.mode, "baseline or dydiff")->check(CLI::IsMember({"baseline", "dydiff"}));
  subs[4]->add_option("--axis", opt.axis, "M, L, eta or alpha")->required()->check(CLI::IsMember({"M", "L", "eta", "alpha"}));
  subs[4]->add_option("--values", opt.values, "values to sweep")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kExitConfig, "usage", e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    ExperimentConfig cfg = load_config(opt.config);
    if (!opt.out.empty()) cfg.out_dir = opt.out;
    if (opt.seed) cfg.seeds = {*opt.seed};
    cfg.validate();
    Runner run(cfg);

    nlohmann::json options = nlohmann::json::object();
    std::string manifest_name = command;
    std::vector<std::filesystem::path> outputs;
    for (std::uint64_t seed : cfg.seeds) {
      std::vector<std::filesystem::path> got;
      if (command == "gen-data")
        got = run.gen_data(seed);
      else if (command == "train-world")
        got = run.train_world(seed);
      else if (command == "train-diffusion")
        got = run.train_diffusion(seed);
      else if (command == "train-policy") {
        got = run.train_policy(seed, training_mode_from_string(opt.mode));
        options["mode"] = opt.mode;
        manifest_name = command + "-" + opt.mode;
      } else if (command == "ablate") {
        got = run.ablate(seed, opt.axis, opt.values);
        options["axis"] = opt.axis;
        options["values"] = opt.values;
        manifest_name = command + "-" + opt.axis;
      } else if (command == "verify-bounds")
        got = run.verify_bounds(seed);
      else
        got = run.analyze_mse(seed);
      outputs.insert(outputs.end(), got.begin(), got.end());
    }
    auto manifest = run.write_manifest(manifest_name, cfg.seeds, options, outputs);
    for (const auto& p : outputs) std::cout << p.string() << "\n";
    std::cout << manifest.string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const DimensionError& e) {
    return fail(kExitConfig, "dimension", e.what());
  } catch (const MissingInputError& e) {
    return fail(kExitMissing, "missing-input", e.what());
  } catch (const FormatError& e) {
    return fail(kExitMissing, "bad-input", e.what());
  } catch (const NumericError& e) {
    return fail(kExitNumeric, "numeric", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
}
