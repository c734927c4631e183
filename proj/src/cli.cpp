#include "gridobs/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "gridobs/pipeline.hpp"

namespace gridobs {

namespace {

struct CommonOptions {
  std::string config = "default";
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Config file, or 'default' for the built-in configuration");
  cmd->add_option("--seed", o.seed, "Overrides the config seed");
  cmd->add_option("--out", o.out, "Output directory (overrides GRIDOBS_OUT and the config)");
}

std::filesystem::path output_dir(const ExperimentConfig& config, const CommonOptions& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("GRIDOBS_OUT"); env && *env) return env;
  return config.output_dir;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hourly load reconstruction and state estimation for partially observed feeders", "gridobs"};
  app.require_subcommand(1, 1);
  CommonOptions opts;
  std::string feeder_path, measurements_path;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "Generate the synthetic population, feeder customers, bills and head PMU data"},
      {"cluster", "Cluster observed daily profiles into the pattern bank"},
      {"train-mtsl", "Train one multi-timescale model per pattern class"},
      {"disaggregate", "Turn every bill into hourly pseudo-measurements"},
      {"identify", "Identify each feeder customer's pattern class"},
      {"estimate", "Run state estimation with pseudo-measurements"},
      {"evaluate", "Compute the metrics report"},
      {"run-all", "Run every stage in order"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, opts);
    subs[name] = cmd;
  }
  subs["estimate"]->add_option("--feeder", feeder_path, "Standalone mode: feeder file");
  subs["estimate"]->add_option("--measurements", measurements_path,
                               "Standalone mode: measurement CSV (step,time,kind,location,re,im,weight)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  ExperimentConfig config;
  try {
    config = load_config(opts.config);
    if (opts.seed) config.apply_seed(*opts.seed);
    config.validate();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  const auto dir = output_dir(config, opts);
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    if (name == "gen-data") {
      run_gen_data(config, dir);
    } else if (name == "cluster") {
      run_cluster(config, dir);
    } else if (name == "train-mtsl") {
      run_train_mtsl(config, dir);
    } else if (name == "disaggregate") {
      run_disaggregate(config, dir);
    } else if (name == "identify") {
      run_identify(config, dir);
    } else if (name == "estimate") {
      if (feeder_path.empty() != measurements_path.empty()) {
        err << "error: --feeder and --measurements go together\n";
        return 1;
      }
      if (!feeder_path.empty()) {
        auto feeder = load_feeder(feeder_path);
        auto steps = read_measurements(measurements_path);
        auto run = estimate_series(feeder, steps, config.estimator);
        std::filesystem::create_directories(dir);
        write_estimation(dir, "se_", feeder, steps, run);
        for (const auto& f : run.failures) err << "warning: " << f << '\n';
      } else {
        run_estimate(config, dir);
      }
    } else if (name == "evaluate") {
      run_evaluate(config, dir);
    } else if (name == "run-all") {
      auto summary = run_all(config, dir);
      for (const auto& [stage, s] : summary.seconds) out << stage << ": " << s << " s\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  out << name << ": done (" << dir.string() << ")\n";
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace gridobs
