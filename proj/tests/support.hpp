#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "chorus/experiment.hpp"

namespace chorus::testing {

// Tower outputs built from fixed probabilities, no parameters behind them.
inline TowerOutputs fixed_outputs(ad::Graph& g, const std::vector<double>& ctr, const std::vector<double>& cvr,
                                  const std::vector<double>& uncvr) {
  auto column = [&](const std::vector<double>& v) {
    ad::Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
    return g.constant(m);
  };
  TowerOutputs out;
  out.ctr = column(ctr);
  out.cvr = column(cvr);
  out.uncvr = column(uncvr);
  out.ctcvr = ad::mul(out.ctr, out.cvr);
  out.ctuncvr = ad::mul(out.ctr, out.uncvr);
  return out;
}

inline BatchLabels labels_of(const std::vector<int>& click, const std::vector<int>& conversion) {
  return make_labels(click, conversion);
}

// Three categorical features plus one numeric feature.
inline FeatureSchema tiny_schema() {
  return build_schema({
      {"u0", FeatureKind::kCategorical, FeatureSide::kUser, 7, 3},
      {"i0", FeatureKind::kCategorical, FeatureSide::kItem, 5, 3},
      {"x0", FeatureKind::kCategorical, FeatureSide::kCross, 4, 2},
      {"n0", FeatureKind::kNumeric, FeatureSide::kUser, 0, 1},
  });
}

// A random funnel-consistent log over tiny_schema(); roughly half clicked.
inline ExposureLog random_log(std::size_t n, std::uint64_t seed, double click_rate = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ExposureLog log;
  log.feature_names = {"u0", "i0", "x0", "n0"};
  for (std::size_t i = 0; i < n; ++i) {
    ExposureRecord r;
    r.sample_id = static_cast<std::int64_t>(i);
    r.click = u(rng) < click_rate ? 1 : 0;
    r.conversion = r.click && u(rng) < 0.5 ? 1 : 0;
    r.features = {std::floor(u(rng) * 7), std::floor(u(rng) * 5), std::floor(u(rng) * 4), u(rng) * 4.0 - 2.0};
    log.records.push_back(r);
  }
  return log;
}

// [input -> 8 -> 4 -> 1] per tower: encoder {8}, tower hidden {4}.
inline Architecture small_arch() {
  Architecture a;
  a.encoder = {8};
  a.tower = {4};
  return a;
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

// Builds the loss for a model on a batch. Called repeatedly with the same
// params so finite differences see the same function.
using LossBuilder = std::function<ad::Var(const TowerOutputs&, const BatchLabels&)>;

inline double eval_loss(ModelParams& params, const FeatureCodec& codec, const ExposureLog& log,
                        const std::vector<std::size_t>& rows, const LossBuilder& build, bool backward) {
  ad::Graph g;
  params.zero_grad();
  const ad::Var x = codec.encode(g, params.embeddings, log, rows);
  const TowerOutputs out = predict(g, params, x);
  const ad::Var loss = build(out, batch_labels(log, rows));
  if (backward) g.backward(loss);
  return loss.scalar();
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

inline double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

// Central differences with step h at `per_param` random coordinates of every
// parameter that enters the batch. `numeric` defaults to `build`; pass a
// different builder when the analytic side uses a surrogate gradient (e.g.
// detached propensities) and the oracle must hold those inputs fixed.
inline GradCheck finite_difference_check(ModelParams& params, const FeatureCodec& codec, const ExposureLog& log,
                                         const std::vector<std::size_t>& rows, const LossBuilder& build,
                                         std::mt19937_64& rng, std::size_t per_param = 3, double h = 1e-5,
                                         const LossBuilder* numeric = nullptr) {
  const LossBuilder& oracle = numeric ? *numeric : build;
  eval_loss(params, codec, log, rows, build, true);
  std::vector<ad::Matrix> analytic;
  for (ad::Parameter* p : params.parameters()) analytic.push_back(p->grad);

  GradCheck out;
  std::vector<ad::Parameter*> ps = params.parameters();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    ad::Parameter& p = *ps[k];
    std::uniform_int_distribution<Eigen::Index> pick(0, p.value.size() - 1);
    for (std::size_t s = 0; s < per_param; ++s) {
      Eigen::Index idx = pick(rng);
      // Embedding rows outside the batch have zero gradient on both sides;
      // prefer coordinates that are touched.
      if (p.name.rfind("embedding.", 0) == 0) {
        for (int tries = 0; tries < 16 && analytic[k](idx) == 0.0; ++tries) idx = pick(rng);
      }
      double& w = p.value(idx);
      const double saved = w;
      w = saved + h;
      const double up = eval_loss(params, codec, log, rows, oracle, false);
      w = saved - h;
      const double down = eval_loss(params, codec, log, rows, oracle, false);
      w = saved;
      const double numeric = (up - down) / (2.0 * h);
      out.max_rel_error = std::max(out.max_rel_error, rel_error(analytic[k](idx), numeric));
      ++out.coordinates;
    }
  }
  return out;
}

// Gradients of every parameter whose name starts with `prefix`.
inline bool all_grads_exactly_zero(ModelParams& params, const std::string& prefix) {
  bool any = false;
  for (ad::Parameter* p : params.parameters()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    any = true;
    if ((p->grad.array() != 0.0).any()) return false;
  }
  return any;
}

inline bool any_grad_nonzero(ModelParams& params, const std::string& prefix) {
  for (ad::Parameter* p : params.parameters()) {
    if (p->name.rfind(prefix, 0) == 0 && (p->grad.array() != 0.0).any()) return true;
  }
  return false;
}

inline double brute_force_auc(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] <= 0.5) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] > 0.5) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / ("chorus_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace chorus::testing
