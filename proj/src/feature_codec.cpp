#include "chorus/feature_codec.hpp"

#include <cmath>
#include <iostream>
#include <random>
#include <unordered_set>

namespace chorus {

FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "categorical") return FeatureKind::kCategorical;
  if (s == "numeric") return FeatureKind::kNumeric;
  throw SchemaError("unknown feature kind '" + s + "'");
}

FeatureSide parse_feature_side(const std::string& s) {
  if (s == "user") return FeatureSide::kUser;
  if (s == "item") return FeatureSide::kItem;
  if (s == "cross") return FeatureSide::kCross;
  throw SchemaError("unknown feature side '" + s + "'");
}

const char* to_string(FeatureKind kind) {
  return kind == FeatureKind::kCategorical ? "categorical" : "numeric";
}

const char* to_string(FeatureSide side) {
  switch (side) {
    case FeatureSide::kUser: return "user";
    case FeatureSide::kItem: return "item";
    case FeatureSide::kCross: return "cross";
  }
  return "unknown";
}

std::size_t FeatureSchema::encoded_width() const {
  std::size_t width = 0;
  for (const FeatureSpec& f : features_) width += f.kind == FeatureKind::kNumeric ? 1 : f.width;
  return width;
}

FeatureSchema build_schema(std::vector<FeatureSpec> specs) {
  if (specs.empty()) throw SchemaError("schema declares no features");
  std::unordered_set<std::string> seen;
  for (FeatureSpec& f : specs) {
    if (f.name.empty()) throw SchemaError("feature with empty name");
    if (!seen.insert(f.name).second) throw SchemaError("duplicate feature name '" + f.name + "'");
    if (f.kind == FeatureKind::kCategorical) {
      if (f.vocabulary < 1) throw SchemaError("feature '" + f.name + "': vocabulary size must be >= 1");
      if (f.width < 1) throw SchemaError("feature '" + f.name + "': embedding width must be >= 1");
    } else {
      f.vocabulary = 0;
      f.width = 1;
    }
  }
  FeatureSchema schema;
  schema.features_ = std::move(specs);
  for (FeatureSide side : {FeatureSide::kUser, FeatureSide::kItem, FeatureSide::kCross}) {
    for (std::size_t i = 0; i < schema.features_.size(); ++i) {
      if (schema.features_[i].side == side) schema.order_.push_back(i);
    }
  }
  return schema;
}

EmbeddingTables init_embeddings(const FeatureSchema& schema, std::uint64_t seed, double init_scale) {
  EmbeddingTables out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-init_scale, init_scale);
  for (const FeatureSpec& f : schema.features()) {
    if (f.kind != FeatureKind::kCategorical) {
      out.table_of_feature.push_back(-1);
      continue;
    }
    ad::Matrix t(static_cast<Eigen::Index>(f.vocabulary), static_cast<Eigen::Index>(f.width));
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = dist(rng);
    }
    out.table_of_feature.push_back(static_cast<int>(out.tables.size()));
    out.tables.emplace_back("embedding." + f.name, std::move(t));
  }
  return out;
}

FeatureCodec::FeatureCodec(FeatureSchema schema, const std::vector<std::string>& column_names)
    : schema_(std::move(schema)) {
  for (const FeatureSpec& f : schema_.features()) {
    std::size_t col = column_names.size();
    for (std::size_t c = 0; c < column_names.size(); ++c) {
      if (column_names[c] == f.name) {
        col = c;
        break;
      }
    }
    if (col == column_names.size()) throw SchemaError("missing feature '" + f.name + "'");
    column_of_feature_.push_back(col);
  }
  stats_.mean.assign(schema_.size(), 0.0);
  stats_.stddev.assign(schema_.size(), 1.0);
}

FeatureCodec::FeatureCodec(const FeatureCodec& other)
    : schema_(other.schema_),
      column_of_feature_(other.column_of_feature_),
      stats_(other.stats_),
      folded_(other.folded_.load()) {}

void FeatureCodec::fit_numeric(const ExposureLog& log, std::span<const std::size_t> rows) {
  for (std::size_t f = 0; f < schema_.size(); ++f) {
    if (schema_.features()[f].kind != FeatureKind::kNumeric || rows.empty()) continue;
    const std::size_t col = column_of_feature_[f];
    double mean = 0.0;
    for (std::size_t r : rows) mean += log.records[r].features[col];
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (std::size_t r : rows) {
      const double d = log.records[r].features[col] - mean;
      var += d * d;
    }
    var /= static_cast<double>(rows.size());
    stats_.mean[f] = mean;
    stats_.stddev[f] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

void FeatureCodec::set_numeric_stats(NumericStats stats) {
  if (stats.mean.size() != schema_.size() || stats.stddev.size() != schema_.size()) {
    throw SchemaError("numeric statistics do not match schema size");
  }
  stats_ = std::move(stats);
}

std::vector<Eigen::Index> FeatureCodec::category_rows(std::span<const ExposureRecord* const> records,
                                                      std::size_t feature) const {
  const FeatureSpec& spec = schema_.features()[feature];
  const std::size_t col = column_of_feature_[feature];
  const auto vocab = static_cast<long long>(spec.vocabulary);
  std::vector<Eigen::Index> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const long long raw = std::llround(records[i]->features[col]);
    long long id = raw % vocab;
    if (id < 0) id += vocab;
    if (id != raw && folded_.fetch_add(1) == 0) {
      std::cerr << "feature '" << spec.name << "': id " << raw << " folded into vocabulary of "
                << vocab << "\n";
    }
    out[i] = static_cast<Eigen::Index>(id);
  }
  return out;
}

ad::Var FeatureCodec::encode_records(ad::Graph& graph, EmbeddingTables& tables,
                                     std::span<const ExposureRecord* const> records) const {
  if (tables.table_of_feature.size() != schema_.size()) {
    throw SchemaError("embedding tables do not match schema");
  }
  for (const ExposureRecord* rec : records) {
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      if (column_of_feature_[f] >= rec->features.size()) {
        throw SchemaError("record " + std::to_string(rec->sample_id) + ": missing feature '" +
                          schema_.features()[f].name + "'");
      }
    }
  }
  std::vector<ad::Var> blocks;
  blocks.reserve(schema_.size());
  for (std::size_t f : schema_.output_order()) {
    const FeatureSpec& spec = schema_.features()[f];
    if (spec.kind == FeatureKind::kCategorical) {
      ad::Parameter& table = tables.tables.at(static_cast<std::size_t>(tables.table_of_feature[f]));
      const std::vector<Eigen::Index> ids = category_rows(records, f);
      blocks.push_back(ad::gather_rows(graph.parameter(table), ids));
    } else {
      const std::size_t col = column_of_feature_[f];
      ad::Matrix column(static_cast<Eigen::Index>(records.size()), 1);
      for (std::size_t i = 0; i < records.size(); ++i) {
        column(static_cast<Eigen::Index>(i), 0) =
            (records[i]->features[col] - stats_.mean[f]) / stats_.stddev[f];
      }
      blocks.push_back(graph.constant(std::move(column)));
    }
  }
  return ad::concat_cols(blocks);
}

ad::Var FeatureCodec::encode(ad::Graph& graph, EmbeddingTables& tables, const ExposureLog& log,
                             std::span<const std::size_t> rows) const {
  std::vector<const ExposureRecord*> records;
  records.reserve(rows.size());
  for (std::size_t r : rows) records.push_back(&log.records.at(r));
  return encode_records(graph, tables, records);
}

ad::Var FeatureCodec::encode(ad::Graph& graph, EmbeddingTables& tables,
                             const ExposureRecord& record) const {
  const ExposureRecord* one = &record;
  return encode_records(graph, tables, std::span<const ExposureRecord* const>(&one, 1));
}

}  // namespace chorus
