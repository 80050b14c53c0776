// chorus: simulate funnels, train debiased conversion models, evaluate and
// compare them.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chorus/experiment.hpp"

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

struct Options {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string method;
  std::string reference;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
};

chorus::ExperimentFile load(const Options& opt) {
  chorus::ExperimentFile file = chorus::load_experiment(opt.config);
  if (opt.seed) chorus::apply_seed(file, *opt.seed);
  return file;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entire-space conversion-rate training and evaluation"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opt.config, "Experiment config (JSON)")->required();
    cmd->add_option("--seed", opt.seed, "Overrides the simulator and trainer seeds");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "Generate a synthetic exposure log");
  add_common(simulate);
  simulate->add_option("--out", opt.out, "Output CSV")->required();

  CLI::App* train = app.add_subcommand("train", "Train one method on the configured dataset");
  add_common(train);
  train->add_option("--out", opt.out, "Output directory")->required();
  train->add_option("--method", opt.method, "Overrides objective.method");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", opt.checkpoint, "Checkpoint written by train")->required();
  evaluate->add_option("--out", opt.out, "Output directory")->required();

  CLI::App* compare = app.add_subcommand("compare", "Train and test several methods over several seeds");
  add_common(compare);
  compare->add_option("--out", opt.out, "Comparison CSV")->required();
  compare->add_option("--methods", opt.methods, "Methods to compare")->delimiter(',');
  compare->add_option("--seeds", opt.seeds, "Seeds")->delimiter(',');
  compare->add_option("--reference", opt.reference, "Reference method for paired differences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    chorus::ExperimentFile file = load(opt);
    if (simulate->parsed()) {
      chorus::cmd_simulate(file, opt.out, std::cerr);
    } else if (train->parsed()) {
      if (!opt.method.empty()) file.trainer = file.trainer_for(chorus::parse_method(opt.method));
      chorus::cmd_train(file, opt.out, std::cerr);
    } else if (evaluate->parsed()) {
      chorus::cmd_evaluate(file, opt.checkpoint, opt.out, std::cout);
    } else if (compare->parsed()) {
      chorus::CompareSpec spec = file.compare;
      if (!opt.methods.empty()) {
        spec.methods.clear();
        for (const std::string& m : opt.methods) spec.methods.push_back(chorus::parse_method(m));
      }
      if (!opt.seeds.empty()) spec.seeds = opt.seeds;
      if (!opt.reference.empty()) spec.reference = chorus::parse_method(opt.reference);
      chorus::cmd_compare(file, spec, opt.out, std::cerr);
    }
  } catch (const chorus::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const chorus::UnknownMethod& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return 0;
}
