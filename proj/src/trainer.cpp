#include "chorus/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace chorus {

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0xE90C4u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double validation_score(ModelParams& params, const FeatureCodec& codec, const ExposureLog& log,
                        std::span<const std::size_t> rows) {
  const Scores s = score(params, codec, log, rows);
  std::vector<double> ctcvr(rows.size()), label(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ExposureRecord& r = log.records[rows[i]];
    ctcvr[i] = s.ctr[i] * s.cvr[i];
    label[i] = r.click * r.conversion;
  }
  try {
    return auc(ctcvr, label);
  } catch (const UndefinedMetric&) {
    // Validation rows without a conversion: fall back to negative logloss.
    return -logloss(ctcvr, label);
  }
}

std::string diagnostics(const StepValues& v, int epoch, std::size_t batch) {
  std::string out = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ":";
  for (Term t : all_terms()) out += std::string(" ") + term_name(t) + "=" + fmt(v.terms[static_cast<std::size_t>(t)]);
  out += " min_ctr=" + fmt(v.min_ctr) + " max_ctr=" + fmt(v.max_ctr);
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  weights.validate();
  ipw.validate();
  if (batch_size < 1) throw std::invalid_argument("trainer: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("trainer: epochs must be >= 0");
  if (patience < 1) throw std::invalid_argument("trainer: patience must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw std::invalid_argument("trainer: learning_rate must be positive");
}

std::string TrainHistory::csv() const {
  std::string out = "epoch";
  for (Term t : all_terms()) out += std::string(",") + term_name(t);
  out += ",total,validation_ctcvr_auc,best\n";
  for (const EpochRecord& e : epochs) {
    out += std::to_string(e.epoch);
    for (double v : e.term_means) out += "," + fmt(v);
    out += "," + fmt(e.total_mean) + "," + fmt(e.validation_ctcvr_auc);
    out += e.epoch == best_epoch ? ",1\n" : ",0\n";
  }
  return out;
}

TrainResult train(const ExperimentConfig& config, const FeatureCodec& codec, const ExposureLog& log,
                  std::span<const std::size_t> train_rows, std::span<const std::size_t> validation_rows) {
  config.validate();
  TrainResult result{init_model(codec.schema(), config.arch, config.seed), {}};
  if (config.epochs == 0) return result;
  if (train_rows.empty()) throw TrainingError("trainer: no training rows");
  if (validation_rows.empty()) throw TrainingError("trainer: no validation rows");

  ModelParams model = result.params;
  const std::vector<ad::Parameter*> params = model.parameters();
  ad::OptimizerState state;
  const ObjectiveConfig objective{config.weights, config.ipw};
  const BatchIterator batches(train_rows.size(), config.batch_size);

  double best = -std::numeric_limits<double>::infinity();
  int stale = 0;
  std::vector<std::size_t> rows;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batch_index = 0;
    for (const std::vector<std::size_t>& batch : batches.epoch(epoch_seed(config.seed, epoch))) {
      rows.resize(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) rows[i] = train_rows[batch[i]];
      const StepValues v = batched_chorus_step(model, codec, log, rows, objective);
      if (!std::isfinite(v.total)) throw TrainingError(diagnostics(v, epoch, batch_index));
      ad::optimizer_step(params, state, config.optimizer);
      for (std::size_t k = 0; k < kTermCount; ++k) rec.term_means[k] += v.terms[k];
      rec.total_mean += v.total;
      ++batch_index;
    }
    for (double& m : rec.term_means) m /= static_cast<double>(batch_index);
    rec.total_mean /= static_cast<double>(batch_index);
    rec.validation_ctcvr_auc = validation_score(model, codec, log, validation_rows);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(rec);

    if (rec.validation_ctcvr_auc > best) {
      best = rec.validation_ctcvr_auc;
      result.history.best_epoch = epoch;
      result.params = model;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  result.params.zero_grad();
  return result;
}

const char* space_name(Space s) {
  switch (s) {
    case Space::kExposure: return "D";
    case Space::kClick: return "O";
    case Space::kUnclick: return "N";
  }
  return "?";
}

const char* target_name(Target t) {
  switch (t) {
    case Target::kCtr: return "ctr";
    case Target::kCvr: return "cvr";
    case Target::kCvrCounterfactual: return "cvr_cf";
    case Target::kCtcvr: return "ctcvr";
    case Target::kCtuncvr: return "ctuncvr";
  }
  return "?";
}

Space parse_space(const std::string& s) {
  for (Space v : {Space::kExposure, Space::kClick, Space::kUnclick}) {
    if (s == space_name(v)) return v;
  }
  throw std::invalid_argument("unknown evaluation space '" + s + "'");
}

Target parse_target(const std::string& s) {
  for (Target v : {Target::kCtr, Target::kCvr, Target::kCvrCounterfactual, Target::kCtcvr, Target::kCtuncvr}) {
    if (s == target_name(v)) return v;
  }
  throw std::invalid_argument("unknown evaluation target '" + s + "'");
}

std::vector<EvalRequest> default_requests(bool has_truth) {
  std::vector<EvalRequest> out = {
      {Space::kExposure, Target::kCtr},
      {Space::kClick, Target::kCvr},
      {Space::kExposure, Target::kCtcvr},
      {Space::kExposure, Target::kCtuncvr},
  };
  if (has_truth) {
    out.push_back({Space::kExposure, Target::kCvrCounterfactual});
    out.push_back({Space::kClick, Target::kCvrCounterfactual});
    out.push_back({Space::kUnclick, Target::kCvrCounterfactual});
  }
  return out;
}

MetricsReport evaluate_scores(const Scores& scores, const ExposureLog& log, std::span<const std::size_t> rows,
                              std::span<const EvalRequest> requests, std::size_t bins) {
  if (scores.ctr.size() != rows.size() || scores.cvr.size() != rows.size() || scores.uncvr.size() != rows.size()) {
    throw std::invalid_argument("evaluate: scores do not match rows");
  }
  MetricsReport report;
  for (const EvalRequest& req : requests) {
    if (req.target == Target::kCvrCounterfactual && !log.has_truth()) {
      throw std::invalid_argument("evaluate: cvr_cf needs simulator ground truth");
    }
    std::vector<double> pred, label, expected;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const ExposureRecord& r = log.records[rows[i]];
      const bool in_space = req.space == Space::kExposure || (req.space == Space::kClick) == (r.click == 1);
      if (!in_space) continue;
      switch (req.target) {
        case Target::kCtr:
          pred.push_back(scores.ctr[i]);
          label.push_back(r.click);
          break;
        case Target::kCvr:
          pred.push_back(scores.cvr[i]);
          label.push_back(r.conversion);
          break;
        case Target::kCvrCounterfactual:
          pred.push_back(scores.cvr[i]);
          label.push_back(r.truth->r_counterfactual);
          expected.push_back(r.truth->p_conv);
          break;
        case Target::kCtcvr:
          pred.push_back(scores.ctr[i] * scores.cvr[i]);
          label.push_back(r.click * r.conversion);
          break;
        case Target::kCtuncvr:
          pred.push_back(scores.ctr[i] * scores.uncvr[i]);
          label.push_back(r.click * (1 - r.conversion));
          break;
      }
    }
    const std::string key = std::string(space_name(req.space)) + "." + target_name(req.target);
    if (pred.empty()) throw std::invalid_argument("evaluate: space " + std::string(space_name(req.space)) + " is empty");
    MetricEntry e;
    e.count = pred.size();
    try {
      e.auc = auc(pred, label);
    } catch (const UndefinedMetric&) {
    }
    e.logloss = logloss(pred, label);
    try {
      e.pcoc = pcoc(pred, expected.empty() ? label : expected);
    } catch (const UndefinedMetric&) {
    }
    report.entries[key] = e;
  }

  std::vector<double> pctr, pcvr, actual;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ExposureRecord& r = log.records[rows[i]];
    if (r.truth) {
      actual.push_back(r.truth->p_conv);
    } else if (r.click == 1) {
      actual.push_back(r.conversion);
    } else {
      continue;
    }
    pctr.push_back(scores.ctr[i]);
    pcvr.push_back(scores.cvr[i]);
  }
  report.bias_curve_is_proxy = !log.has_truth();
  if (pctr.size() >= bins) report.bias_curve = bias_curve(pctr, pcvr, actual, bins);
  return report;
}

MetricsReport evaluate(ModelParams& params, const FeatureCodec& codec, const ExposureLog& log,
                       std::span<const std::size_t> rows, std::span<const EvalRequest> requests, std::size_t bins) {
  return evaluate_scores(score(params, codec, log, rows), log, rows, requests, bins);
}

}  // namespace chorus
