#include "chorus/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace chorus {

namespace {

constexpr int kMaxBisection = 60;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

struct Directions {
  std::vector<double> click;
  std::vector<double> conv;
};

// Unit click direction u and a unit vector v orthogonal to it; conversion
// direction is correlation * u + sqrt(1 - correlation^2) * v.
Directions make_directions(const SimConfig& cfg) {
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 0xD1CEULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = cfg.latent_dim;
  std::vector<double> u(d), v(d);
  for (double& x : u) x = normal(rng);
  for (double& x : v) x = normal(rng);
  auto dot = [d](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += a[k] * b[k];
    return s;
  };
  const double nu = std::sqrt(dot(u, u));
  for (double& x : u) x /= nu;
  const double proj = dot(u, v);
  for (std::size_t k = 0; k < d; ++k) v[k] -= proj * u[k];
  const double nv = std::sqrt(dot(v, v));
  for (double& x : v) x /= nv;

  Directions out;
  out.click.resize(d);
  out.conv.resize(d);
  const double rho = cfg.correlation;
  const double ortho = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  for (std::size_t k = 0; k < d; ++k) {
    out.click[k] = cfg.click_signal * u[k];
    out.conv[k] = cfg.conv_signal * (rho * u[k] + ortho * v[k]);
  }
  return out;
}

template <typename F>
double bisect(F&& rate_at, double target) {
  double lo = -40.0;
  double hi = 40.0;
  for (int it = 0; it < kMaxBisection; ++it) {
    const double mid = 0.5 * (lo + hi);
    (rate_at(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::uint64_t shard_seed(std::uint64_t master, std::size_t shard) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(shard), 0x51A7Du};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

void SimConfig::validate() const {
  auto open_unit = [](double p) { return p > 0.0 && p < 1.0; };
  if (n_exposures < 1) throw std::invalid_argument("sim: n_exposures must be >= 1");
  if (latent_dim < 2) throw std::invalid_argument("sim: latent_dim must be >= 2");
  if (!open_unit(target_click_rate)) throw std::invalid_argument("sim: target_click_rate must lie in (0,1)");
  if (!open_unit(target_conv_rate_given_click)) {
    throw std::invalid_argument("sim: target_conv_rate_given_click must lie in (0,1)");
  }
  if (correlation < 0.0 || correlation > 1.0) throw std::invalid_argument("sim: correlation must lie in [0,1]");
  if (bins < 2) throw std::invalid_argument("sim: bins must be >= 2");
  if (noise < 0.0) throw std::invalid_argument("sim: noise must be non-negative");
  if (embedding_width < 1) throw std::invalid_argument("sim: embedding_width must be >= 1");
  if (calibration_draws < 1000) throw std::invalid_argument("sim: calibration_draws must be >= 1000");
  if (shard_size < 1) throw std::invalid_argument("sim: shard_size must be >= 1");
}

std::vector<std::string> sim_feature_names(const SimConfig& config) {
  std::vector<std::string> names;
  const std::size_t user = config.latent_dim / 2;
  for (std::size_t k = 0; k < config.latent_dim; ++k) {
    names.push_back(k < user ? "u" + std::to_string(k) : "i" + std::to_string(k - user));
  }
  return names;
}

FeatureSchema sim_schema(const SimConfig& config) {
  std::vector<FeatureSpec> specs;
  const std::size_t user = config.latent_dim / 2;
  const std::vector<std::string> names = sim_feature_names(config);
  for (std::size_t k = 0; k < names.size(); ++k) {
    specs.push_back({names[k], FeatureKind::kCategorical, k < user ? FeatureSide::kUser : FeatureSide::kItem,
                     config.bins, config.embedding_width});
  }
  return build_schema(std::move(specs));
}

SimResult generate(const SimConfig& cfg) {
  cfg.validate();
  const Directions dir = make_directions(cfg);
  const std::size_t d = cfg.latent_dim;

  // Calibrate intercepts on held-out latent draws.
  std::vector<double> click_score(cfg.calibration_draws), conv_score(cfg.calibration_draws);
  {
    std::mt19937_64 rng(shard_seed(cfg.seed, ~std::size_t{0}));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < cfg.calibration_draws; ++i) {
      double sa = 0.0, sc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double z = normal(rng);
        sa += dir.click[k] * z;
        sc += dir.conv[k] * z;
      }
      click_score[i] = sa;
      conv_score[i] = sc;
    }
  }
  auto click_rate_at = [&](double b) {
    double s = 0.0;
    for (double x : click_score) s += logistic(x + b);
    return s / static_cast<double>(click_score.size());
  };
  const double b0 = bisect(click_rate_at, cfg.target_click_rate);
  auto conv_rate_at = [&](double c) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < click_score.size(); ++i) {
      const double pc = logistic(click_score[i] + b0);
      num += pc * logistic(conv_score[i] + c);
      den += pc;
    }
    return num / den;
  };
  const double c0 = bisect(conv_rate_at, cfg.target_conv_rate_given_click);
  const double achieved_click = click_rate_at(b0);
  const double achieved_conv = conv_rate_at(c0);
  if (std::abs(achieved_click - cfg.target_click_rate) > 1e-3 * cfg.target_click_rate ||
      std::abs(achieved_conv - cfg.target_conv_rate_given_click) > 1e-3 * cfg.target_conv_rate_given_click) {
    char msg[160];
    std::snprintf(msg, sizeof(msg), "sim: intercept calibration failed (click %.6f, conversion|click %.6f)",
                  achieved_click, achieved_conv);
    throw CalibrationError(msg, achieved_click, achieved_conv);
  }

  SimResult result;
  result.log.feature_names = sim_feature_names(cfg);
  result.log.records.resize(cfg.n_exposures);
  const double feature_sd = std::sqrt(1.0 + cfg.noise * cfg.noise);
  const double max_bin = static_cast<double>(cfg.bins - 1);

  const std::size_t shards = (cfg.n_exposures + cfg.shard_size - 1) / cfg.shard_size;
  for (std::size_t shard = 0; shard < shards; ++shard) {
    std::mt19937_64 rng(shard_seed(cfg.seed, shard));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const std::size_t begin = shard * cfg.shard_size;
    const std::size_t end = std::min(cfg.n_exposures, begin + cfg.shard_size);
    std::vector<double> z(d);
    for (std::size_t i = begin; i < end; ++i) {
      ExposureRecord& rec = result.log.records[i];
      rec.sample_id = static_cast<std::int64_t>(i);
      double sa = b0, sc = c0;
      for (std::size_t k = 0; k < d; ++k) {
        z[k] = normal(rng);
        sa += dir.click[k] * z[k];
        sc += dir.conv[k] * z[k];
      }
      rec.features.resize(d);
      for (std::size_t k = 0; k < d; ++k) {
        const double observed = z[k] + cfg.noise * normal(rng);
        const double bin = std::floor(standard_normal_cdf(observed / feature_sd) * static_cast<double>(cfg.bins));
        rec.features[k] = std::clamp(bin, 0.0, max_bin);
      }
      GroundTruth t;
      t.p_click = logistic(sa);
      t.p_conv = logistic(sc);
      rec.click = uniform(rng) < t.p_click ? 1 : 0;
      t.r_counterfactual = uniform(rng) < t.p_conv ? 1 : 0;
      rec.conversion = rec.click * t.r_counterfactual;
      rec.truth = t;
    }
  }

  GenerationReport& rep = result.report;
  rep.n = cfg.n_exposures;
  rep.click_intercept = b0;
  rep.conv_intercept = c0;
  const SpaceStats stats = space_stats(result.log.records);
  rep.click_rate = stats.click_rate;
  rep.conv_rate_given_click = stats.conv_rate_given_click;
  double sum_clicked = 0.0, sum_unclicked = 0.0;
  double mean_pc = 0.0, mean_pv = 0.0;
  for (const ExposureRecord& r : result.log.records) {
    (r.click ? sum_clicked : sum_unclicked) += r.truth->p_conv;
    mean_pc += r.truth->p_click;
    mean_pv += r.truth->p_conv;
  }
  const auto n = static_cast<double>(rep.n);
  mean_pc /= n;
  mean_pv /= n;
  rep.mean_p_conv_clicked = stats.click ? sum_clicked / static_cast<double>(stats.click) : 0.0;
  rep.mean_p_conv_unclicked = stats.unclick ? sum_unclicked / static_cast<double>(stats.unclick) : 0.0;
  double cov = 0.0, var_c = 0.0, var_v = 0.0;
  for (const ExposureRecord& r : result.log.records) {
    const double a = r.truth->p_click - mean_pc;
    const double b = r.truth->p_conv - mean_pv;
    cov += a * b;
    var_c += a * a;
    var_v += b * b;
  }
  rep.p_click_p_conv_correlation = (var_c > 0.0 && var_v > 0.0) ? cov / std::sqrt(var_c * var_v) : 0.0;
  return result;
}

SpaceStats space_stats(const std::vector<ExposureRecord>& records) {
  SpaceStats s;
  s.exposure = records.size();
  for (const ExposureRecord& r : records) {
    if (r.click) {
      ++s.click;
      ++(r.conversion ? s.conversion : s.unconversion);
    } else {
      ++s.unclick;
    }
  }
  s.click_rate = s.exposure ? static_cast<double>(s.click) / static_cast<double>(s.exposure) : 0.0;
  s.conv_rate_given_click = s.click ? static_cast<double>(s.conversion) / static_cast<double>(s.click) : 0.0;
  return s;
}

std::string format_report(const GenerationReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "exposures=%zu\nclick_rate=%.6f\nconv_rate_given_click=%.6f\nclick_intercept=%.6f\n"
                "conv_intercept=%.6f\nmean_p_conv_clicked=%.6f\nmean_p_conv_unclicked=%.6f\n"
                "p_click_p_conv_correlation=%.6f\n",
                r.n, r.click_rate, r.conv_rate_given_click, r.click_intercept, r.conv_intercept,
                r.mean_p_conv_clicked, r.mean_p_conv_unclicked, r.p_click_p_conv_correlation);
  return buf;
}

}  // namespace chorus
