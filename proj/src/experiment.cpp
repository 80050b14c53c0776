#include "chorus/experiment.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace chorus {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

Term parse_term(const std::string& name) {
  for (Term t : all_terms()) {
    if (name == term_name(t)) return t;
  }
  throw ConfigError("unknown loss term '" + name + "'");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

FeatureSchema ExperimentFile::schema() const { return features ? *features : sim_schema(sim); }

std::filesystem::path ExperimentFile::resolved_data_path() const {
  if (data_path.empty()) throw ConfigError("data.path is not set");
  std::filesystem::path p(data_path);
  return p.is_absolute() ? p : base_dir / p;
}

ExperimentConfig ExperimentFile::trainer_for(Method m) const {
  ExperimentConfig cfg = trainer;
  cfg.method = m;
  cfg.weights = method_weights(m, lambda_ctr);
  for (const auto& [term, w] : weight_overrides) cfg.weights[term] = w;
  if (align_overrides) cfg.weights.align = *align_overrides;
  return cfg;
}

ExperimentFile parse_experiment(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "root", {"sim", "features", "data", "model", "objective", "trainer", "eval", "compare"});

  ExperimentFile f;
  f.text = text;
  f.base_dir = base_dir;

  if (root.contains("sim")) {
    const json& s = root["sim"];
    check_keys(s, "sim", {"n_exposures", "latent_dim", "target_click_rate", "target_conv_rate_given_click",
                          "correlation", "bins", "noise", "click_signal", "conv_signal", "embedding_width", "seed",
                          "calibration_draws", "shard_size"});
    read(s, "n_exposures", f.sim.n_exposures, "sim");
    read(s, "latent_dim", f.sim.latent_dim, "sim");
    read(s, "target_click_rate", f.sim.target_click_rate, "sim");
    read(s, "target_conv_rate_given_click", f.sim.target_conv_rate_given_click, "sim");
    read(s, "correlation", f.sim.correlation, "sim");
    read(s, "bins", f.sim.bins, "sim");
    read(s, "noise", f.sim.noise, "sim");
    read(s, "click_signal", f.sim.click_signal, "sim");
    read(s, "conv_signal", f.sim.conv_signal, "sim");
    read(s, "embedding_width", f.sim.embedding_width, "sim");
    read(s, "seed", f.sim.seed, "sim");
    read(s, "calibration_draws", f.sim.calibration_draws, "sim");
    read(s, "shard_size", f.sim.shard_size, "sim");
  }
  try {
    f.sim.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (root.contains("features")) {
    const json& feats = root["features"];
    if (!feats.is_array()) throw ConfigError("section 'features' must be an array");
    std::vector<FeatureSpec> specs;
    for (const json& item : feats) {
      check_keys(item, "features[]", {"name", "kind", "side", "vocabulary", "width"});
      FeatureSpec spec;
      std::string kind = "categorical", side = "user";
      read(item, "name", spec.name, "features[]");
      read(item, "kind", kind, "features[]");
      read(item, "side", side, "features[]");
      read(item, "vocabulary", spec.vocabulary, "features[]");
      read(item, "width", spec.width, "features[]");
      try {
        spec.kind = parse_feature_kind(kind);
        spec.side = parse_feature_side(side);
      } catch (const SchemaError& e) {
        throw ConfigError(e.what());
      }
      specs.push_back(std::move(spec));
    }
    try {
      f.features = build_schema(std::move(specs));
    } catch (const SchemaError& e) {
      throw ConfigError(e.what());
    }
  }

  if (root.contains("data")) {
    check_keys(root["data"], "data", {"path"});
    read(root["data"], "path", f.data_path, "data");
  }

  if (root.contains("model")) {
    const json& m = root["model"];
    check_keys(m, "model", {"encoder", "tower"});
    read(m, "encoder", f.trainer.arch.encoder, "model");
    read(m, "tower", f.trainer.arch.tower, "model");
  }

  std::string method = "chorus";
  if (root.contains("objective")) {
    const json& o = root["objective"];
    check_keys(o, "objective",
               {"method", "lambda_ctr", "weights", "align_weights", "propensity_floor", "detach_propensity"});
    read(o, "method", method, "objective");
    read(o, "lambda_ctr", f.lambda_ctr, "objective");
    read(o, "propensity_floor", f.trainer.ipw.floor, "objective");
    read(o, "detach_propensity", f.trainer.ipw.detach, "objective");
    if (o.contains("weights")) {
      if (!o["weights"].is_object()) throw ConfigError("objective.weights must be an object");
      for (const auto& [name, value] : o["weights"].items()) {
        if (!value.is_number()) throw ConfigError("objective.weights." + name + " must be a number");
        f.weight_overrides.emplace_back(parse_term(name), value.get<double>());
      }
    }
    if (o.contains("align_weights")) {
      std::array<double, 4> a{};
      read(o, "align_weights", a, "objective");
      f.align_overrides = a;
    }
  }

  if (root.contains("trainer")) {
    const json& t = root["trainer"];
    check_keys(t, "trainer", {"batch_size", "epochs", "patience", "learning_rate", "optimizer", "beta1", "beta2",
                              "epsilon", "seed"});
    read(t, "batch_size", f.trainer.batch_size, "trainer");
    read(t, "epochs", f.trainer.epochs, "trainer");
    read(t, "patience", f.trainer.patience, "trainer");
    read(t, "learning_rate", f.trainer.optimizer.learning_rate, "trainer");
    read(t, "beta1", f.trainer.optimizer.beta1, "trainer");
    read(t, "beta2", f.trainer.optimizer.beta2, "trainer");
    read(t, "epsilon", f.trainer.optimizer.epsilon, "trainer");
    read(t, "seed", f.trainer.seed, "trainer");
    std::string opt = "adam";
    read(t, "optimizer", opt, "trainer");
    if (opt == "adam") f.trainer.optimizer.kind = ad::OptimizerKind::kAdam;
    else if (opt == "sgd") f.trainer.optimizer.kind = ad::OptimizerKind::kSgd;
    else throw ConfigError("trainer.optimizer must be 'adam' or 'sgd'");
  }

  if (root.contains("eval")) {
    const json& e = root["eval"];
    check_keys(e, "eval", {"bins", "requests"});
    read(e, "bins", f.bins, "eval");
    if (e.contains("requests")) {
      std::vector<std::string> keys;
      read(e, "requests", keys, "eval");
      std::vector<EvalRequest> reqs;
      for (const std::string& k : keys) {
        const auto dot = k.find('.');
        if (dot == std::string::npos) throw ConfigError("eval request '" + k + "' must look like <space>.<target>");
        try {
          reqs.push_back({parse_space(k.substr(0, dot)), parse_target(k.substr(dot + 1))});
        } catch (const std::invalid_argument& err) {
          throw ConfigError(err.what());
        }
      }
      f.requests = std::move(reqs);
    }
    if (f.bins < 2) throw ConfigError("eval.bins must be >= 2");
  }

  try {
    f.trainer.method = parse_method(method);
    f.trainer = f.trainer_for(f.trainer.method);
    f.trainer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (root.contains("compare")) {
    const json& c = root["compare"];
    check_keys(c, "compare", {"methods", "seeds", "reference"});
    std::vector<std::string> methods;
    read(c, "methods", methods, "compare");
    std::string reference;
    read(c, "reference", reference, "compare");
    read(c, "seeds", f.compare.seeds, "compare");
    try {
      if (!methods.empty()) {
        f.compare.methods.clear();
        for (const std::string& m : methods) f.compare.methods.push_back(parse_method(m));
      }
      if (!reference.empty()) f.compare.reference = parse_method(reference);
    } catch (const UnknownMethod& e) {
      throw ConfigError(e.what());
    }
  }
  return f;
}

ExperimentFile load_experiment(const std::filesystem::path& path) {
  return parse_experiment(read_file(path), path.has_parent_path() ? path.parent_path() : ".");
}

void apply_seed(ExperimentFile& file, std::uint64_t seed) {
  file.sim.seed = seed;
  file.trainer.seed = seed;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof(byte), "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config_snapshot"] = config_snapshot;
  j["dataset"] = {{"path", dataset_path}, {"sha256", dataset_digest}};
  j["seed"] = seed;
  j["tool_version"] = tool_version;
  json arts = json::object();
  for (const auto& [name, path] : artifacts) arts[name] = path;
  j["artifacts"] = arts;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  const json j = json::parse(text);
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config_snapshot = j.at("config_snapshot").get<std::string>();
  m.dataset_path = j.at("dataset").at("path").get<std::string>();
  m.dataset_digest = j.at("dataset").at("sha256").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.tool_version = j.at("tool_version").get<std::string>();
  for (const auto& [name, path] : j.at("artifacts").items()) m.artifacts.emplace_back(name, path.get<std::string>());
  return m;
}

void RunManifest::write(const std::filesystem::path& path) const { write_text(path, to_json()); }

LoadedData load_dataset(const ExperimentFile& file) {
  LoadedData d;
  const FeatureSchema schema = file.schema();
  d.log = read_log(file.resolved_data_path(), &schema, d.report);
  if (d.log.empty()) throw std::runtime_error("dataset " + file.resolved_data_path().string() + " has no usable rows");
  d.split = split_indices(d.log.size(), file.trainer.seed);
  return d;
}

void cmd_simulate(const ExperimentFile& file, const std::filesystem::path& out, std::ostream& log) {
  const SimResult sim = generate(file.sim);
  write_log(out, sim.log);
  log << format_report(sim.report);
  const SpaceStats s = space_stats(sim.log.records);
  log << "spaces D=" << s.exposure << " O=" << s.click << " N=" << s.unclick << " R=" << s.conversion
      << " M=" << s.unconversion << "\n";

  RunManifest m;
  m.command = "simulate";
  m.config_snapshot = file.text;
  m.dataset_path = out.string();
  m.dataset_digest = sha256_file(out);
  m.seed = file.sim.seed;
  m.artifacts = {{"dataset", out.string()}};
  m.write(out.string() + ".manifest.json");
}

TrainArtifacts cmd_train(const ExperimentFile& file, const std::filesystem::path& out_dir, std::ostream& log) {
  LoadedData data = load_dataset(file);
  if (data.report.malformed + data.report.funnel_violations > 0) {
    log << "ingest: skipped " << data.report.malformed << " malformed rows and " << data.report.funnel_violations
        << " funnel violations\n";
  }
  FeatureCodec codec(file.schema(), data.log.feature_names);
  codec.fit_numeric(data.log, data.split.train);

  TrainArtifacts out;
  out.result = train(file.trainer, codec, data.log, data.split.train, data.split.validation);
  for (const EpochRecord& e : out.result.history.epochs) {
    log << "epoch " << e.epoch << " total=" << fmt(e.total_mean) << " val_ctcvr_auc=" << fmt(e.validation_ctcvr_auc)
        << " (" << fmt(e.seconds) << "s)\n";
  }

  std::filesystem::create_directories(out_dir);
  out.checkpoint = out_dir / "checkpoint.txt";
  out.history = out_dir / "history.csv";
  out.manifest = out_dir / "manifest.json";
  save_checkpoint(out.checkpoint, out.result.params, &codec.numeric_stats());
  write_text(out.history, out.result.history.csv());

  RunManifest m;
  m.command = "train";
  m.config_snapshot = file.text;
  m.dataset_path = file.resolved_data_path().string();
  m.dataset_digest = sha256_file(file.resolved_data_path());
  m.seed = file.trainer.seed;
  m.artifacts = {{"checkpoint", out.checkpoint.string()}, {"history", out.history.string()}};
  m.write(out.manifest);
  return out;
}

MetricsReport cmd_evaluate(const ExperimentFile& file, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& out_dir, std::ostream& log) {
  LoadedData data = load_dataset(file);
  const FeatureSchema schema = file.schema();
  NumericStats stats;
  ModelParams params = load_checkpoint(checkpoint, schema, &stats);
  FeatureCodec codec(schema, data.log.feature_names);
  if (!stats.mean.empty()) codec.set_numeric_stats(stats);

  const std::vector<EvalRequest> requests = file.requests ? *file.requests : default_requests(data.log.has_truth());
  MetricsReport report = evaluate(params, codec, data.log, data.split.test, requests, file.bins);
  std::filesystem::create_directories(out_dir);
  report.write(out_dir / "metrics.txt", out_dir / "bias_curve.csv");
  log << report.to_key_value();
  return report;
}

double RunSummary::metric(const std::string& key) const {
  const auto dot = key.rfind('.');
  const auto it = metrics.entries.find(key.substr(0, dot));
  if (it == metrics.entries.end()) return std::numeric_limits<double>::quiet_NaN();
  const std::string field = key.substr(dot + 1);
  const MetricEntry& e = it->second;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (field == "auc") return e.auc.value_or(nan);
  if (field == "logloss") return e.logloss;
  if (field == "pcoc") return e.pcoc.value_or(nan);
  if (field == "count") return static_cast<double>(e.count);
  return nan;
}

double RunSummary::lowest_bin_abs_bias() const {
  if (metrics.bias_curve.empty()) return std::numeric_limits<double>::quiet_NaN();
  const BiasBin& b = metrics.bias_curve.front();
  return std::abs(b.mean_pred - b.mean_actual);
}

std::vector<RunSummary> run_comparison(const ExperimentFile& file, const CompareSpec& spec, std::ostream& log) {
  if (spec.methods.size() < 2) throw ConfigError("compare needs at least two methods");
  if (spec.seeds.empty()) throw ConfigError("compare needs at least one seed");
  std::vector<RunSummary> runs;
  for (std::uint64_t seed : spec.seeds) {
    ExperimentFile seeded = file;
    apply_seed(seeded, seed);
    LoadedData data;
    if (seeded.data_path.empty()) {
      data.log = generate(seeded.sim).log;
      data.split = split_indices(data.log.size(), seed);
    } else {
      data = load_dataset(seeded);
    }
    FeatureCodec codec(seeded.schema(), data.log.feature_names);
    codec.fit_numeric(data.log, data.split.train);
    const std::vector<EvalRequest> requests =
        seeded.requests ? *seeded.requests : default_requests(data.log.has_truth());

    for (Method m : spec.methods) {
      const auto start = std::chrono::steady_clock::now();
      const ExperimentConfig cfg = seeded.trainer_for(m);
      TrainResult trained = train(cfg, codec, data.log, data.split.train, data.split.validation);
      RunSummary r;
      r.method = m;
      r.seed = seed;
      r.metrics = evaluate(trained.params, codec, data.log, data.split.test, requests, seeded.bins);
      r.best_epoch = trained.history.best_epoch;
      r.epochs_run = static_cast<int>(trained.history.epochs.size());
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << method_name(m) << " seed=" << seed << " epochs=" << r.epochs_run << " best=" << r.best_epoch
          << " D.cvr_cf.auc=" << fmt(r.metric("D.cvr_cf.auc")) << " N.cvr_cf.pcoc=" << fmt(r.metric("N.cvr_cf.pcoc"))
          << " D.ctcvr.auc=" << fmt(r.metric("D.ctcvr.auc")) << " low_bin_bias=" << fmt(r.lowest_bin_abs_bias())
          << " (" << fmt(r.seconds) << "s)\n";
      runs.push_back(std::move(r));
    }
  }
  return runs;
}

std::string comparison_csv(const std::vector<RunSummary>& runs, const CompareSpec& spec) {
  static const std::vector<std::string> kMetrics = {
      "D.ctr.auc",     "O.cvr.auc",     "D.cvr_cf.auc",  "D.cvr_cf.logloss", "D.ctcvr.auc",
      "D.ctuncvr.auc", "D.cvr_cf.pcoc", "N.cvr_cf.pcoc", "O.cvr_cf.pcoc",
  };
  auto value = [](const RunSummary& r, const std::string& key) {
    return key == "low_pctr_bin_abs_bias" ? r.lowest_bin_abs_bias() : r.metric(key);
  };
  std::vector<std::string> columns = kMetrics;
  columns.push_back("low_pctr_bin_abs_bias");

  std::map<std::uint64_t, const RunSummary*> reference;
  for (const RunSummary& r : runs) {
    if (r.method == spec.reference) reference[r.seed] = &r;
  }

  std::string out = "method,seed";
  for (const std::string& c : columns) out += "," + c;
  for (const std::string& c : columns) out += ",delta_" + c;
  out += "\n";

  for (const RunSummary& r : runs) {
    out += std::string(method_name(r.method)) + "," + std::to_string(r.seed);
    for (const std::string& c : columns) out += "," + fmt(value(r, c));
    const auto ref = reference.find(r.seed);
    for (const std::string& c : columns) {
      out += "," + (ref == reference.end() ? std::string("nan") : fmt(value(r, c) - value(*ref->second, c)));
    }
    out += "\n";
  }
  for (Method m : spec.methods) {
    std::vector<double> sums(columns.size(), 0.0), deltas(columns.size(), 0.0);
    std::size_t n = 0, paired = 0;
    for (const RunSummary& r : runs) {
      if (r.method != m) continue;
      ++n;
      const auto ref = reference.find(r.seed);
      if (ref != reference.end()) ++paired;
      for (std::size_t k = 0; k < columns.size(); ++k) {
        sums[k] += value(r, columns[k]);
        if (ref != reference.end()) deltas[k] += value(r, columns[k]) - value(*ref->second, columns[k]);
      }
    }
    if (n == 0) continue;
    out += std::string(method_name(m)) + ",mean";
    for (double s : sums) out += "," + fmt(s / static_cast<double>(n));
    for (double d : deltas) out += "," + (paired ? fmt(d / static_cast<double>(paired)) : std::string("nan"));
    out += "\n";
  }
  return out;
}

void cmd_compare(const ExperimentFile& file, const CompareSpec& spec, const std::filesystem::path& out,
                 std::ostream& log) {
  const std::vector<RunSummary> runs = run_comparison(file, spec, log);
  write_text(out, comparison_csv(runs, spec));
}

}  // namespace chorus
