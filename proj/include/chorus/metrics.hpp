#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace chorus {

class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Rank-based ROC AUC with average ranks for ties: the probability that a
// random positive outscores a random negative, ties counting one half.
// Labels are treated as positive when > 0.5.
double auc(std::span<const double> scores, std::span<const double> labels);

// Mean binary cross-entropy with scores clamped into the probability band.
double logloss(std::span<const double> scores, std::span<const double> labels);

// Mean prediction over mean actual.
double pcoc(std::span<const double> predicted, std::span<const double> actual);

struct BiasBin {
  double lo = 0.0;  // smallest pCTR in the bin
  double hi = 0.0;  // largest pCTR in the bin
  double mean_pred = 0.0;
  double mean_actual = 0.0;
  std::size_t count = 0;
};

// Sorts samples by pCTR (ties by position) into `n_bins` equal-count bins
// whose sizes differ by at most one, and reports mean pCVR against mean
// actual per bin.
std::vector<BiasBin> bias_curve(std::span<const double> pctr, std::span<const double> pcvr,
                                std::span<const double> actual, std::size_t n_bins);

struct MetricEntry {
  std::optional<double> auc;  // unset when only one class is present
  double logloss = 0.0;
  std::optional<double> pcoc;  // unset when the actual mean is zero
  std::size_t count = 0;
};

struct MetricsReport {
  // Keyed by "<space>.<target>", e.g. "D.cvr_cf".
  std::map<std::string, MetricEntry> entries;
  std::vector<BiasBin> bias_curve;
  // True when the bias curve's actual values are observed conversions of
  // clicked samples rather than simulator ground truth.
  bool bias_curve_is_proxy = false;

  std::string to_key_value() const;
  std::string curve_csv() const;
  void write(const std::filesystem::path& kv_path, const std::filesystem::path& curve_path) const;
};

}  // namespace chorus
