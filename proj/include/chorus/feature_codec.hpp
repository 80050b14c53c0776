#pragma once

// Maps raw record features to the dense encoder input: user block, item
// block, cross block, each in declared schema order. Categorical features are
// embedded; numeric features contribute one standardized column.

#include <atomic>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "chorus/autodiff.hpp"
#include "chorus/exposure_log.hpp"

namespace chorus {

enum class FeatureKind { kCategorical, kNumeric };
enum class FeatureSide { kUser, kItem, kCross };

FeatureKind parse_feature_kind(const std::string& s);
FeatureSide parse_feature_side(const std::string& s);
const char* to_string(FeatureKind kind);
const char* to_string(FeatureSide side);

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kCategorical;
  FeatureSide side = FeatureSide::kUser;
  std::size_t vocabulary = 0;  // categorical only
  std::size_t width = 1;       // embedding width; numeric features are width 1
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;

  const std::vector<FeatureSpec>& features() const { return features_; }
  std::size_t size() const { return features_.size(); }
  // Sum of embedding widths plus the numeric count.
  std::size_t encoded_width() const;
  // Schema positions in output order: user, item, cross; stable within a side.
  const std::vector<std::size_t>& output_order() const { return order_; }

 private:
  friend FeatureSchema build_schema(std::vector<FeatureSpec> specs);
  std::vector<FeatureSpec> features_;
  std::vector<std::size_t> order_;
};

// Validates names (unique, non-empty), vocabulary sizes and widths.
FeatureSchema build_schema(std::vector<FeatureSpec> specs);

// One gradient-tracked vocabulary x width table per categorical feature, in
// schema order.
struct EmbeddingTables {
  std::vector<ad::Parameter> tables;
  // Index into `tables` per schema position, -1 for numeric features.
  std::vector<int> table_of_feature;
};

EmbeddingTables init_embeddings(const FeatureSchema& schema, std::uint64_t seed,
                                double init_scale = 0.05);

struct NumericStats {
  std::vector<double> mean;    // per schema position; 0 for categorical
  std::vector<double> stddev;  // per schema position; 1 for categorical
};

class FeatureCodec {
 public:
  // Binds schema features to log columns by name; a missing column is an
  // error naming the feature.
  FeatureCodec(FeatureSchema schema, const std::vector<std::string>& column_names);
  FeatureCodec(const FeatureCodec& other);
  FeatureCodec& operator=(const FeatureCodec&) = delete;

  const FeatureSchema& schema() const { return schema_; }

  // Computes and freezes standardization statistics from `rows`.
  void fit_numeric(const ExposureLog& log, std::span<const std::size_t> rows);
  const NumericStats& numeric_stats() const { return stats_; }
  void set_numeric_stats(NumericStats stats);

  // Dense input node for the given rows, one row per record.
  ad::Var encode(ad::Graph& graph, EmbeddingTables& tables, const ExposureLog& log,
                 std::span<const std::size_t> rows) const;
  ad::Var encode(ad::Graph& graph, EmbeddingTables& tables, const ExposureRecord& record) const;

  // Number of categorical ids folded into range by modulo so far.
  std::size_t folded_ids() const { return folded_.load(); }

 private:
  std::vector<Eigen::Index> category_rows(std::span<const ExposureRecord* const> records,
                                          std::size_t feature) const;
  ad::Var encode_records(ad::Graph& graph, EmbeddingTables& tables,
                         std::span<const ExposureRecord* const> records) const;

  FeatureSchema schema_;
  std::vector<std::size_t> column_of_feature_;
  NumericStats stats_;
  mutable std::atomic<std::size_t> folded_{0};
};

}  // namespace chorus
