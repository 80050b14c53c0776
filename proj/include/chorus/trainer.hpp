#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "chorus/exposure_log.hpp"
#include "chorus/feature_codec.hpp"
#include "chorus/metrics.hpp"
#include "chorus/model.hpp"
#include "chorus/objectives.hpp"
#include "chorus/optimizer.hpp"

namespace chorus {

struct ExperimentConfig {
  Method method = Method::kChorus;
  TermWeights weights = method_weights(Method::kChorus);
  IpwConfig ipw;
  Architecture arch;
  ad::OptimizerHyper optimizer;
  std::size_t batch_size = 1024;
  int epochs = 20;
  int patience = 3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::array<double, kTermCount> term_means{};
  double total_mean = 0.0;
  double validation_ctcvr_auc = 0.0;
  double seconds = 0.0;  // wall-clock; not part of the CSV
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 when no epoch ran

  // Deterministic per-epoch CSV: epoch, term means, total, validation metric,
  // best marker. Wall-clock is excluded so reruns compare byte-for-byte.
  std::string csv() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelParams params;  // best validation epoch, or the initialization
  TrainHistory history;
};

// One optimizer step per shuffled batch over the training rows; validation
// CTCVR-AUC over the exposure space picks the retained epoch, and training
// stops after `patience` epochs without improvement.
TrainResult train(const ExperimentConfig& config, const FeatureCodec& codec, const ExposureLog& log,
                  std::span<const std::size_t> train_rows, std::span<const std::size_t> validation_rows);

enum class Space { kExposure, kClick, kUnclick };
enum class Target { kCtr, kCvr, kCvrCounterfactual, kCtcvr, kCtuncvr };

const char* space_name(Space s);    // D, O, N
const char* target_name(Target t);  // ctr, cvr, cvr_cf, ctcvr, ctuncvr
Space parse_space(const std::string& s);
Target parse_target(const std::string& s);

struct EvalRequest {
  Space space;
  Target target;
};

// CTR on D, observed CVR on O, CTCVR and CTunCVR on D; with ground truth also
// counterfactual CVR on D, O and N.
std::vector<EvalRequest> default_requests(bool has_truth);

// Metrics of precomputed scores (aligned with `rows`). For cvr_cf, AUC and
// logloss use the counterfactual conversion and PCOC uses the true
// conversion probability. The bias curve covers D against true_p_conv when
// ground truth exists, else clicked samples against observed conversions.
MetricsReport evaluate_scores(const Scores& scores, const ExposureLog& log, std::span<const std::size_t> rows,
                              std::span<const EvalRequest> requests, std::size_t bins = 10);

MetricsReport evaluate(ModelParams& params, const FeatureCodec& codec, const ExposureLog& log,
                       std::span<const std::size_t> rows, std::span<const EvalRequest> requests,
                       std::size_t bins = 10);

}  // namespace chorus
