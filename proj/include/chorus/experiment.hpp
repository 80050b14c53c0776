#pragma once

// Config files, run manifests and the simulate / train / evaluate / compare
// commands. The CLI binary is a thin argument parser over these functions.
//
// The config is one JSON document with sections "sim", "features", "data",
// "model", "objective", "trainer", "eval" and "compare"; every section and
// key is optional and unknown keys are rejected. The manifest embeds the
// config text verbatim.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "chorus/simulator.hpp"
#include "chorus/trainer.hpp"

namespace chorus {

inline constexpr const char* kToolVersion = "0.3.0";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CompareSpec {
  std::vector<Method> methods = {Method::kChorus, Method::kEsmm};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  Method reference = Method::kEsmm;
};

struct ExperimentFile {
  std::string text;                // verbatim config contents
  std::filesystem::path base_dir;  // relative data paths resolve against this
  SimConfig sim;
  std::optional<FeatureSchema> features;
  std::string data_path;
  double lambda_ctr = 1.0;
  std::vector<std::pair<Term, double>> weight_overrides;
  std::optional<std::array<double, 4>> align_overrides;
  ExperimentConfig trainer;
  std::size_t bins = 10;
  std::optional<std::vector<EvalRequest>> requests;
  CompareSpec compare;

  // Schema from the "features" section, else the simulator's schema.
  FeatureSchema schema() const;
  std::filesystem::path resolved_data_path() const;
  // Re-derives term weights for `m`, keeping explicit overrides from the file.
  ExperimentConfig trainer_for(Method m) const;
};

ExperimentFile parse_experiment(const std::string& text, const std::filesystem::path& base_dir = ".");
ExperimentFile load_experiment(const std::filesystem::path& path);

// Overrides both the simulator and the trainer seed.
void apply_seed(ExperimentFile& file, std::uint64_t seed);

std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  std::string config_snapshot;
  std::string dataset_path;
  std::string dataset_digest;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> artifacts;
  std::string tool_version = kToolVersion;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
  void write(const std::filesystem::path& path) const;
};

// Loads the configured dataset and returns it with the seeded split.
struct LoadedData {
  ExposureLog log;
  IngestReport report;
  DataSplit split;
};
LoadedData load_dataset(const ExperimentFile& file);

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path history;
  std::filesystem::path manifest;
  TrainResult result;
};

void cmd_simulate(const ExperimentFile& file, const std::filesystem::path& out, std::ostream& log);
TrainArtifacts cmd_train(const ExperimentFile& file, const std::filesystem::path& out_dir, std::ostream& log);
MetricsReport cmd_evaluate(const ExperimentFile& file, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& out_dir, std::ostream& log);

struct RunSummary {
  Method method = Method::kChorus;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  int best_epoch = 0;
  int epochs_run = 0;
  double seconds = 0.0;

  double metric(const std::string& key) const;  // e.g. "D.cvr_cf.auc"; NaN when absent
  double lowest_bin_abs_bias() const;
};

// For each seed: simulate (or load) the data once, then train and test every
// method on the same split. Methods share the seed for initialization, so
// rows are paired by seed.
std::vector<RunSummary> run_comparison(const ExperimentFile& file, const CompareSpec& spec, std::ostream& log);

// Per-run rows plus one aggregate row per method, with paired differences to
// the reference method.
std::string comparison_csv(const std::vector<RunSummary>& runs, const CompareSpec& spec);

void cmd_compare(const ExperimentFile& file, const CompareSpec& spec, const std::filesystem::path& out,
                 std::ostream& log);

}  // namespace chorus
