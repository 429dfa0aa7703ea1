// Command-line entry point wiring the pipeline: synthesize a benchmark,
// build a split, train, evaluate, export the learned graph, or run a
// training-mix sweep. One JSON config describes an experiment; --seed and
// --out override the corresponding config keys.

#include <cstdio>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "causpref/errors.hpp"
#include "causpref/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int run(const std::string& command, const std::string& config_path,
        long long seed_override, const std::string& out_override) {
  std::ifstream in(config_path);
  if (!in) throw causpref::UsageError("cannot open config file: " + config_path);
  nlohmann::json raw;
  try {
    raw = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw causpref::UsageError("malformed config " + config_path + ": " +
                               e.what());
  }
  if (seed_override >= 0) {
    raw["seeds"] = {static_cast<std::uint64_t>(seed_override)};
  }
  if (!out_override.empty()) raw["out_dir"] = out_override;
  const causpref::ExperimentConfig config =
      causpref::parse_experiment_config(raw);

  if (command == "synth") {
    causpref::cmd_synth(config, raw);
  } else if (command == "split") {
    causpref::cmd_split(config, raw);
  } else if (command == "train") {
    causpref::cmd_train(config, raw);
  } else if (command == "eval") {
    causpref::cmd_eval(config, raw);
  } else if (command == "export-dag") {
    causpref::cmd_export_dag(config, raw);
  } else {
    causpref::cmd_sweep(config, raw);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causpref: invariant-preference recommendation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string out_override;
  long long seed_override = -1;
  app.add_option("--config", config_path, "experiment config (json)")
      ->required();
  app.add_option("--seed", seed_override, "override the config seeds");
  app.add_option("--out", out_override, "override the output directory");

  for (const char* name :
       {"synth", "split", "train", "eval", "export-dag", "sweep"}) {
    app.add_subcommand(name);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    return run(app.get_subcommands().front()->get_name(), config_path,
               seed_override, out_override);
  } catch (const causpref::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const causpref::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const causpref::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
