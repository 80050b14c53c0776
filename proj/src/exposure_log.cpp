#include "chorus/exposure_log.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "chorus/feature_codec.hpp"

namespace chorus {

namespace {

constexpr const char* kTruthColumns[] = {"true_p_click", "true_p_conv", "r_counterfactual"};

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_int64(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_label(std::string_view s, int& out) {
  if (s == "0") {
    out = 0;
    return true;
  }
  if (s == "1") {
    out = 1;
    return true;
  }
  return false;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

bool ExposureLog::has_truth() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(), [](const ExposureRecord& r) { return r.truth.has_value(); });
}

ExposureLog read_log(const std::filesystem::path& path, IngestReport& report) {
  return read_log(path, nullptr, report);
}

ExposureLog read_log(const std::filesystem::path& path, const FeatureSchema* schema,
                     IngestReport& report) {
  std::ifstream in(path);
  if (!in) throw LogFormatError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw LogFormatError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string_view> header = split_commas(line);

  auto find_col = [&](std::string_view name) -> std::ptrdiff_t {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : it - header.begin();
  };
  const std::ptrdiff_t id_col = find_col("sample_id");
  const std::ptrdiff_t click_col = find_col("click");
  const std::ptrdiff_t conv_col = find_col("conversion");
  if (click_col < 0) throw LogFormatError(path.string() + ": missing label column 'click'");
  if (conv_col < 0) throw LogFormatError(path.string() + ": missing label column 'conversion'");

  std::ptrdiff_t truth_cols[3];
  int truth_present = 0;
  for (int k = 0; k < 3; ++k) {
    truth_cols[k] = find_col(kTruthColumns[k]);
    truth_present += truth_cols[k] >= 0 ? 1 : 0;
  }
  if (truth_present != 0 && truth_present != 3) {
    throw LogFormatError(path.string() + ": ground-truth columns must appear together");
  }

  ExposureLog log;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto sc = static_cast<std::ptrdiff_t>(c);
    if (sc == id_col || sc == click_col || sc == conv_col) continue;
    if (truth_present && (sc == truth_cols[0] || sc == truth_cols[1] || sc == truth_cols[2])) continue;
    log.feature_names.emplace_back(header[c]);
    feature_cols.push_back(c);
  }
  if (schema != nullptr) {
    for (const FeatureSpec& f : schema->features()) {
      if (std::find(log.feature_names.begin(), log.feature_names.end(), f.name) == log.feature_names.end()) {
        throw LogFormatError(path.string() + ": missing feature column '" + f.name + "'");
      }
    }
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++report.rows_read;
    const std::vector<std::string_view> cells = split_commas(line);
    auto malformed = [&](std::string reason) {
      ++report.malformed;
      report.issues.push_back({line_no, std::move(reason)});
    };
    if (cells.size() != header.size()) {
      malformed("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
      continue;
    }

    ExposureRecord rec;
    if (id_col >= 0) {
      if (!parse_int64(cells[static_cast<std::size_t>(id_col)], rec.sample_id)) {
        malformed("bad sample_id");
        continue;
      }
    } else {
      rec.sample_id = static_cast<std::int64_t>(report.rows_read - 1);
    }
    if (!parse_label(cells[static_cast<std::size_t>(click_col)], rec.click) ||
        !parse_label(cells[static_cast<std::size_t>(conv_col)], rec.conversion)) {
      malformed("labels must be 0 or 1");
      continue;
    }
    bool ok = true;
    rec.features.resize(feature_cols.size());
    for (std::size_t k = 0; k < feature_cols.size() && ok; ++k) {
      if (!parse_double(cells[feature_cols[k]], rec.features[k])) {
        malformed("bad value for feature '" + log.feature_names[k] + "'");
        ok = false;
      }
    }
    if (!ok) continue;
    if (truth_present) {
      GroundTruth t;
      if (!parse_double(cells[static_cast<std::size_t>(truth_cols[0])], t.p_click) ||
          !parse_double(cells[static_cast<std::size_t>(truth_cols[1])], t.p_conv) ||
          !parse_label(cells[static_cast<std::size_t>(truth_cols[2])], t.r_counterfactual)) {
        malformed("bad ground-truth fields");
        continue;
      }
      rec.truth = t;
    }
    if (rec.conversion == 1 && rec.click == 0) {
      ++report.funnel_violations;
      report.issues.push_back({line_no, "conversion without click"});
      continue;
    }
    log.records.push_back(std::move(rec));
    ++report.accepted;
  }
  return log;
}

void write_log(const std::filesystem::path& path, const ExposureLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LogFormatError("cannot write " + path.string());
  const bool truth = log.has_truth();
  std::string buf = "sample_id,click,conversion";
  for (const std::string& name : log.feature_names) buf += "," + name;
  if (truth) {
    for (const char* c : kTruthColumns) buf += std::string(",") + c;
  }
  buf += "\n";
  out << buf;
  for (const ExposureRecord& r : log.records) {
    buf.clear();
    buf += std::to_string(r.sample_id);
    buf += r.click ? ",1" : ",0";
    buf += r.conversion ? ",1" : ",0";
    for (double v : r.features) {
      buf += ',';
      buf += format_double(v);
    }
    if (truth) {
      buf += ',' + format_double(r.truth->p_click);
      buf += ',' + format_double(r.truth->p_conv);
      buf += r.truth->r_counterfactual ? ",1" : ",0";
    }
    buf += '\n';
    out << buf;
  }
  if (!out) throw LogFormatError("write failed for " + path.string());
}

SpacePartition partition(const ExposureLog& log) {
  std::vector<std::size_t> all(log.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return partition(log, all);
}

SpacePartition partition(const ExposureLog& log, const std::vector<std::size_t>& rows) {
  SpacePartition p;
  for (std::size_t i : rows) {
    const ExposureRecord& r = log.records.at(i);
    p.exposure.push_back(i);
    if (r.click == 1) {
      p.click.push_back(i);
      (r.conversion == 1 ? p.conversion : p.unconversion).push_back(i);
    } else {
      p.unclick.push_back(i);
    }
  }
  return p;
}

BatchIterator::BatchIterator(std::size_t n, std::size_t batch_size) : n_(n), batch_size_(batch_size) {
  if (n == 0) throw std::invalid_argument("batch iterator over an empty dataset");
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
}

std::size_t BatchIterator::batches_per_epoch() const { return (n_ + batch_size_ - 1) / batch_size_; }

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::uint64_t epoch_seed) const {
  std::vector<std::size_t> perm(n_);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(epoch_seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  batches.reserve(batches_per_epoch());
  for (std::size_t start = 0; start < n_; start += batch_size_) {
    const std::size_t stop = std::min(n_, start + batch_size_);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

DataSplit split_indices(std::size_t n, std::uint64_t seed, double train_share, double validation_share) {
  if (train_share <= 0.0 || validation_share < 0.0 || train_share + validation_share > 1.0) {
    throw std::invalid_argument("invalid split shares");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x5eed5a1177ULL);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * train_share);
  const auto n_val = static_cast<std::size_t>(static_cast<double>(n) * validation_share);
  DataSplit s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                      perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  // Sorted so evaluation order does not depend on the shuffle.
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace chorus
