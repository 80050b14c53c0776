#include "chorus/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "chorus/objectives.hpp"

namespace chorus {

namespace {

void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": arrays differ in length");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const double> labels) {
  require_aligned(scores.size(), labels.size(), "auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // Ranks are 1-based; a tie group spanning [i, j] shares the mean rank.
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] > 0.5) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j + 1;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw UndefinedMetric("auc: both classes must be present");
  const auto p = static_cast<double>(positives);
  const auto q = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double logloss(std::span<const double> scores, std::span<const double> labels) {
  require_aligned(scores.size(), labels.size(), "logloss");
  if (scores.empty()) throw UndefinedMetric("logloss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) s += bce(scores[i], labels[i]);
  return s / static_cast<double>(scores.size());
}

double pcoc(std::span<const double> predicted, std::span<const double> actual) {
  require_aligned(predicted.size(), actual.size(), "pcoc");
  if (predicted.empty()) throw UndefinedMetric("pcoc: empty input");
  const double pred = std::accumulate(predicted.begin(), predicted.end(), 0.0);
  const double act = std::accumulate(actual.begin(), actual.end(), 0.0);
  if (act == 0.0) throw UndefinedMetric("pcoc: actual mean is zero");
  return pred / act;
}

std::vector<BiasBin> bias_curve(std::span<const double> pctr, std::span<const double> pcvr,
                                std::span<const double> actual, std::size_t n_bins) {
  require_aligned(pctr.size(), pcvr.size(), "bias_curve");
  require_aligned(pctr.size(), actual.size(), "bias_curve");
  if (n_bins < 2) throw std::invalid_argument("bias_curve: need at least 2 bins");
  const std::size_t n = pctr.size();
  if (n < n_bins) throw std::invalid_argument("bias_curve: fewer samples than bins");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pctr[a] < pctr[b]; });

  std::vector<BiasBin> bins(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t begin = b * n / n_bins;
    const std::size_t end = (b + 1) * n / n_bins;
    BiasBin& bin = bins[b];
    bin.count = end - begin;
    bin.lo = pctr[order[begin]];
    bin.hi = pctr[order[end - 1]];
    for (std::size_t k = begin; k < end; ++k) {
      bin.mean_pred += pcvr[order[k]];
      bin.mean_actual += actual[order[k]];
    }
    bin.mean_pred /= static_cast<double>(bin.count);
    bin.mean_actual /= static_cast<double>(bin.count);
  }
  return bins;
}

std::string MetricsReport::to_key_value() const {
  std::string out;
  for (const auto& [key, e] : entries) {
    out += key + ".auc=" + (e.auc ? fmt(*e.auc) : "undefined") + "\n";
    out += key + ".logloss=" + fmt(e.logloss) + "\n";
    out += key + ".pcoc=" + (e.pcoc ? fmt(*e.pcoc) : "undefined") + "\n";
    out += key + ".count=" + std::to_string(e.count) + "\n";
  }
  if (!bias_curve.empty()) {
    out += std::string("bias_curve.actual=") + (bias_curve_is_proxy ? "observed_clicked_proxy" : "true_p_conv") + "\n";
    out += "bias_curve.bins=" + std::to_string(bias_curve.size()) + "\n";
  }
  return out;
}

std::string MetricsReport::curve_csv() const {
  std::string out = "bin_lo,bin_hi,mean_pred,mean_actual,count\n";
  for (const BiasBin& b : bias_curve) {
    out += fmt(b.lo) + "," + fmt(b.hi) + "," + fmt(b.mean_pred) + "," + fmt(b.mean_actual) + "," +
           std::to_string(b.count) + "\n";
  }
  return out;
}

void MetricsReport::write(const std::filesystem::path& kv_path, const std::filesystem::path& curve_path) const {
  std::ofstream kv(kv_path, std::ios::binary);
  if (!kv) throw std::runtime_error("cannot write " + kv_path.string());
  kv << to_key_value();
  std::ofstream curve(curve_path, std::ios::binary);
  if (!curve) throw std::runtime_error("cannot write " + curve_path.string());
  curve << curve_csv();
}

}  // namespace chorus
