#include "chorus/model.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace chorus {

namespace {

constexpr const char* kCheckpointMagic = "chorus-checkpoint 1";

ad::Var activate(Activation act, ad::Var x) {
  switch (act) {
    case Activation::kRelu: return ad::relu(x);
    case Activation::kSigmoid: return ad::sigmoid(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

std::vector<DenseLayer> make_stack(const std::string& prefix, std::size_t input,
                                   const std::vector<std::size_t>& widths, Activation hidden,
                                   Activation last, std::mt19937_64& rng) {
  std::vector<DenseLayer> layers;
  std::size_t in = input;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const std::size_t out = widths[k];
    if (out == 0) throw ArchitectureError(prefix + ": layer " + std::to_string(k) + " has zero width");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    ad::Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
    DenseLayer layer;
    const std::string name = prefix + "." + std::to_string(k);
    layer.weight = ad::Parameter(name + ".weight", std::move(w));
    layer.bias = ad::Parameter(name + ".bias", ad::Matrix::Zero(1, static_cast<Eigen::Index>(out)));
    layer.activation = k + 1 == widths.size() ? last : hidden;
    layers.push_back(std::move(layer));
    in = out;
  }
  return layers;
}

void append_matrix(std::string& out, const ad::Parameter& p) {
  char buf[40];
  out += p.name + " " + std::to_string(p.value.rows()) + " " + std::to_string(p.value.cols()) + "\n";
  for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), c == 0 ? "%.17g" : " %.17g", p.value(r, c));
      out += buf;
    }
    out += "\n";
  }
}

std::string join_widths(const std::vector<std::size_t>& widths) {
  std::string s;
  for (std::size_t w : widths) s += " " + std::to_string(w);
  return s;
}

std::vector<std::size_t> parse_widths(std::istringstream& line) {
  std::vector<std::size_t> out;
  std::size_t w;
  while (line >> w) out.push_back(w);
  return out;
}

}  // namespace

ad::Var forward_mlp(ad::Graph& graph, std::vector<DenseLayer>& layers, ad::Var input) {
  ad::Var x = input;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    DenseLayer& layer = layers[k];
    if (layer.weight.value.rows() != x.cols()) {
      throw ad::ShapeError("layer " + std::to_string(k) + " (" + layer.weight.name + "): expects input width " +
                           std::to_string(layer.weight.value.rows()) + ", got " + std::to_string(x.cols()));
    }
    if (layer.bias.value.rows() != 1 || layer.bias.value.cols() != layer.weight.value.cols()) {
      throw ad::ShapeError("layer " + std::to_string(k) + " (" + layer.bias.name + "): bias does not match weight");
    }
    x = ad::add_bias(ad::matmul(x, graph.parameter(layer.weight)), graph.parameter(layer.bias));
    x = activate(layer.activation, x);
  }
  return x;
}

std::size_t Architecture::encoder_output_width() const {
  return encoder.empty() ? input_width : encoder.back();
}

std::vector<ad::Parameter*> ModelParams::parameters() {
  std::vector<ad::Parameter*> out;
  for (ad::Parameter& t : embeddings.tables) out.push_back(&t);
  for (auto* stack : {&encoder, &ctr, &cvr, &uncvr}) {
    for (DenseLayer& l : *stack) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::vector<const ad::Parameter*> ModelParams::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (ad::Parameter* p : const_cast<ModelParams*>(this)->parameters()) out.push_back(p);
  return out;
}

void ModelParams::zero_grad() {
  for (ad::Parameter* p : parameters()) p->zero_grad();
}

ModelParams init_model(const FeatureSchema& schema, Architecture arch, std::uint64_t seed) {
  const std::size_t schema_width = schema.encoded_width();
  if (arch.input_width == 0) arch.input_width = schema_width;
  if (arch.input_width != schema_width) {
    throw ArchitectureError("input width " + std::to_string(arch.input_width) + " does not match encoded width " +
                            std::to_string(schema_width));
  }
  if (arch.tower_input_width == 0) arch.tower_input_width = arch.encoder_output_width();
  if (arch.tower_input_width != arch.encoder_output_width()) {
    throw ArchitectureError("tower input width " + std::to_string(arch.tower_input_width) +
                            " differs from encoder output width " + std::to_string(arch.encoder_output_width()));
  }

  ModelParams m;
  m.arch = arch;
  m.seed = seed;
  m.embeddings = init_embeddings(schema, seed);
  std::mt19937_64 rng(seed ^ 0xC0FFEE1234ULL);
  m.encoder = make_stack("encoder", arch.input_width, arch.encoder, Activation::kRelu, Activation::kRelu, rng);
  std::vector<std::size_t> tower = arch.tower;
  tower.push_back(1);
  m.ctr = make_stack("ctr", arch.tower_input_width, tower, Activation::kRelu, Activation::kSigmoid, rng);
  m.cvr = make_stack("cvr", arch.tower_input_width, tower, Activation::kRelu, Activation::kSigmoid, rng);
  m.uncvr = make_stack("uncvr", arch.tower_input_width, tower, Activation::kRelu, Activation::kSigmoid, rng);
  return m;
}

TowerOutputs predict(ad::Graph& graph, ModelParams& params, ad::Var encoded) {
  const ad::Var shared = forward_mlp(graph, params.encoder, encoded);
  TowerOutputs out;
  out.ctr = ad::clamp(forward_mlp(graph, params.ctr, shared), kProbFloor, kProbCeil);
  out.cvr = ad::clamp(forward_mlp(graph, params.cvr, shared), kProbFloor, kProbCeil);
  out.uncvr = ad::clamp(forward_mlp(graph, params.uncvr, shared), kProbFloor, kProbCeil);
  out.ctcvr = ad::mul(out.ctr, out.cvr);
  out.ctuncvr = ad::mul(out.ctr, out.uncvr);
  return out;
}

Scores score(ModelParams& params, const FeatureCodec& codec, const ExposureLog& log,
             std::span<const std::size_t> rows, std::size_t chunk) {
  Scores s;
  s.ctr.reserve(rows.size());
  s.cvr.reserve(rows.size());
  s.uncvr.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t len = std::min(chunk, rows.size() - start);
    ad::Graph graph;
    const ad::Var x = codec.encode(graph, params.embeddings, log, rows.subspan(start, len));
    const TowerOutputs out = predict(graph, params, x);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(len); ++i) {
      s.ctr.push_back(out.ctr.value()(i, 0));
      s.cvr.push_back(out.cvr.value()(i, 0));
      s.uncvr.push_back(out.uncvr.value()(i, 0));
    }
  }
  return s;
}

std::string checkpoint_text(const ModelParams& params, const NumericStats* stats) {
  std::string out = std::string(kCheckpointMagic) + "\n";
  out += "seed " + std::to_string(params.seed) + "\n";
  out += "input_width " + std::to_string(params.arch.input_width) + "\n";
  out += "encoder" + join_widths(params.arch.encoder) + "\n";
  out += "tower" + join_widths(params.arch.tower) + "\n";
  out += "tower_input_width " + std::to_string(params.arch.tower_input_width) + "\n";
  if (stats != nullptr) {
    char buf[40];
    out += "numeric_mean";
    for (double v : stats->mean) {
      std::snprintf(buf, sizeof(buf), " %.17g", v);
      out += buf;
    }
    out += "\nnumeric_stddev";
    for (double v : stats->stddev) {
      std::snprintf(buf, sizeof(buf), " %.17g", v);
      out += buf;
    }
    out += "\n";
  }
  const auto ps = params.parameters();
  out += "parameters " + std::to_string(ps.size()) + "\n";
  for (const ad::Parameter* p : ps) append_matrix(out, *p);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const NumericStats* stats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_text(params, stats);
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, const FeatureSchema& schema, NumericStats* stats) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  }
  Architecture arch;
  std::uint64_t seed = 0;
  NumericStats loaded_stats;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") ls >> seed;
    else if (key == "input_width") ls >> arch.input_width;
    else if (key == "encoder") arch.encoder = parse_widths(ls);
    else if (key == "tower") arch.tower = parse_widths(ls);
    else if (key == "tower_input_width") ls >> arch.tower_input_width;
    else if (key == "numeric_mean" || key == "numeric_stddev") {
      std::vector<double>& dst = key == "numeric_mean" ? loaded_stats.mean : loaded_stats.stddev;
      double v;
      while (ls >> v) dst.push_back(v);
    } else if (key == "parameters") {
      ls >> count;
      break;
    } else {
      throw std::runtime_error(path.string() + ": unexpected line '" + line + "'");
    }
  }

  ModelParams m = init_model(schema, arch, seed);
  auto ps = m.parameters();
  if (count != ps.size()) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(ps.size()) + " parameters, found " +
                             std::to_string(count));
  }
  for (ad::Parameter* p : ps) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols) || name != p->name || rows != p->value.rows() || cols != p->value.cols()) {
      throw std::runtime_error(path.string() + ": parameter '" + p->name + "' missing or misshapen");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (!(in >> p->value(r, c))) throw std::runtime_error(path.string() + ": truncated parameter " + name);
      }
    }
  }
  if (stats != nullptr && !loaded_stats.mean.empty()) *stats = std::move(loaded_stats);
  return m;
}

}  // namespace chorus
