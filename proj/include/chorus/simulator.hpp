#pragma once

// Synthetic exposure -> click -> conversion generator with known propensities.
//
// Each exposure draws a latent z ~ N(0, I). Click and conversion
// probabilities are logistic in z along directions whose cosine equals the
// configured correlation strength, so clicked exposures are enriched for high
// conversion probability (sample selection bias). Features are per-dimension
// equal-probability bins of z plus noise; the model never sees z itself. A
// counterfactual conversion outcome is drawn for every exposure, clicked or
// not, and the observed conversion is click * counterfactual.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "chorus/exposure_log.hpp"
#include "chorus/feature_codec.hpp"

namespace chorus {

struct SimConfig {
  std::size_t n_exposures = 200000;
  std::size_t latent_dim = 8;
  double target_click_rate = 0.10;
  double target_conv_rate_given_click = 0.20;
  double correlation = 0.8;
  std::size_t bins = 16;
  double noise = 0.5;
  double click_signal = 1.2;  // norm of the click direction
  double conv_signal = 1.2;   // norm of the conversion direction
  std::size_t embedding_width = 8;
  std::uint64_t seed = 1;
  std::size_t calibration_draws = 200000;
  std::size_t shard_size = 50000;

  void validate() const;
};

class CalibrationError : public std::runtime_error {
 public:
  CalibrationError(const std::string& what, double click_rate, double conv_rate)
      : std::runtime_error(what), achieved_click_rate(click_rate), achieved_conv_rate(conv_rate) {}
  double achieved_click_rate;
  double achieved_conv_rate;
};

struct GenerationReport {
  std::size_t n = 0;
  double click_intercept = 0.0;
  double conv_intercept = 0.0;
  double click_rate = 0.0;
  double conv_rate_given_click = 0.0;
  double mean_p_conv_clicked = 0.0;
  double mean_p_conv_unclicked = 0.0;
  double p_click_p_conv_correlation = 0.0;
};

struct SimResult {
  ExposureLog log;
  GenerationReport report;
};

// Feature names of the generated log: the first half of the latent
// dimensions are user-side (u0, u1, ...), the rest item-side (i0, i1, ...).
std::vector<std::string> sim_feature_names(const SimConfig& config);
FeatureSchema sim_schema(const SimConfig& config);

SimResult generate(const SimConfig& config);

struct SpaceStats {
  std::size_t exposure = 0;
  std::size_t click = 0;
  std::size_t unclick = 0;
  std::size_t conversion = 0;
  std::size_t unconversion = 0;
  double click_rate = 0.0;
  double conv_rate_given_click = 0.0;
};

SpaceStats space_stats(const std::vector<ExposureRecord>& records);

std::string format_report(const GenerationReport& report);

}  // namespace chorus
