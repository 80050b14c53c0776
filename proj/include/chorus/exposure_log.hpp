#pragma once

// Exposure logs: one row per shown user-item pair with click and conversion
// labels, optionally carrying simulator ground truth.
//
// On-disk format is a comma separated file with header
//   sample_id,click,conversion,<feature columns...>[,true_p_click,true_p_conv,r_counterfactual]
// Labels are strictly 0/1. Floating point values are written with 17
// significant digits so a write/read cycle is lossless.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace chorus {

class FeatureSchema;

struct GroundTruth {
  double p_click = 0.0;
  double p_conv = 0.0;
  int r_counterfactual = 0;

  bool operator==(const GroundTruth&) const = default;
};

struct ExposureRecord {
  std::int64_t sample_id = 0;
  int click = 0;
  int conversion = 0;
  // Aligned with ExposureLog::feature_names.
  std::vector<double> features;
  std::optional<GroundTruth> truth;

  bool operator==(const ExposureRecord&) const = default;
};

struct ExposureLog {
  std::vector<std::string> feature_names;
  std::vector<ExposureRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  // True when every record carries ground truth.
  bool has_truth() const;
};

struct IngestIssue {
  std::size_t line = 0;
  std::string reason;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t accepted = 0;
  std::size_t malformed = 0;
  std::size_t funnel_violations = 0;
  std::vector<IngestIssue> issues;
};

class LogFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads a log. A missing label column, or a schema feature absent from the
// header, is fatal. Malformed rows and rows with conversion=1, click=0 are
// skipped and itemized in `report`.
ExposureLog read_log(const std::filesystem::path& path, const FeatureSchema* schema,
                     IngestReport& report);
ExposureLog read_log(const std::filesystem::path& path, IngestReport& report);

void write_log(const std::filesystem::path& path, const ExposureLog& log);

// Index lists for the exposure (D), click (O), un-click (N), conversion (R)
// and un-conversion (M) spaces.
struct SpacePartition {
  std::vector<std::size_t> exposure;
  std::vector<std::size_t> click;
  std::vector<std::size_t> unclick;
  std::vector<std::size_t> conversion;
  std::vector<std::size_t> unconversion;
};

SpacePartition partition(const ExposureLog& log);
SpacePartition partition(const ExposureLog& log, const std::vector<std::size_t>& rows);

// Seeded per-epoch shuffling over record indices [0, n). Every index appears
// exactly once per epoch; the final short batch is kept.
class BatchIterator {
 public:
  BatchIterator(std::size_t n, std::size_t batch_size);

  std::vector<std::vector<std::size_t>> epoch(std::uint64_t epoch_seed) const;
  std::size_t batches_per_epoch() const;

 private:
  std::size_t n_;
  std::size_t batch_size_;
};

// Seeded 80/10/10 split of [0, n).
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

DataSplit split_indices(std::size_t n, std::uint64_t seed, double train_share = 0.8,
                        double validation_share = 0.1);

}  // namespace chorus
