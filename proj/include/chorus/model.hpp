#pragma once

// Shared-bottom multi-task network: embeddings -> encoder MLP -> three
// sigmoid towers (CTR, CVR, unCVR). The click-and-convert and
// click-and-not-convert scores are products of the CTR head with the CVR and
// unCVR heads.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chorus/autodiff.hpp"
#include "chorus/feature_codec.hpp"

namespace chorus {

// Sigmoid outputs are clamped into this band before any logarithm.
inline constexpr double kProbFloor = 1e-7;
inline constexpr double kProbCeil = 1.0 - 1e-7;

enum class Activation { kRelu, kSigmoid, kIdentity };

struct DenseLayer {
  ad::Parameter weight;  // in x out
  ad::Parameter bias;    // 1 x out
  Activation activation = Activation::kIdentity;
};

// Evaluates the stack on `input` (rows = samples). A layer whose weight rows
// do not match the incoming width raises ShapeError naming that layer.
ad::Var forward_mlp(ad::Graph& graph, std::vector<DenseLayer>& layers, ad::Var input);

struct Architecture {
  std::size_t input_width = 0;
  std::vector<std::size_t> encoder = {64, 32};
  std::vector<std::size_t> tower = {16};  // hidden widths; a 1-unit sigmoid output is appended
  std::size_t tower_input_width = 0;      // 0 means "encoder output width"

  std::size_t encoder_output_width() const;
};

class ArchitectureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelParams {
  Architecture arch;
  std::uint64_t seed = 0;
  EmbeddingTables embeddings;
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> ctr;
  std::vector<DenseLayer> cvr;
  std::vector<DenseLayer> uncvr;

  // Every trainable array in a fixed order: embeddings, encoder, ctr, cvr,
  // uncvr. Pointers refer to this object.
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  void zero_grad();
};

// Deterministic uniform fan-in scaled initialization. `arch.input_width` is
// taken from the schema when left at 0.
ModelParams init_model(const FeatureSchema& schema, Architecture arch, std::uint64_t seed);

struct TowerOutputs {
  ad::Var ctr;
  ad::Var cvr;
  ad::Var uncvr;
  ad::Var ctcvr;    // ctr * cvr
  ad::Var ctuncvr;  // ctr * uncvr
};

TowerOutputs predict(ad::Graph& graph, ModelParams& params, ad::Var encoded);

struct Scores {
  std::vector<double> ctr;
  std::vector<double> cvr;
  std::vector<double> uncvr;
};

// Forward-only scoring of `rows` in chunks.
Scores score(ModelParams& params, const FeatureCodec& codec, const ExposureLog& log,
             std::span<const std::size_t> rows, std::size_t chunk = 4096);

// Text checkpoint: architecture, seed, optional numeric feature statistics and
// every parameter array at 17 significant digits. Equal models produce
// byte-identical files.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const NumericStats* stats = nullptr);
std::string checkpoint_text(const ModelParams& params, const NumericStats* stats = nullptr);
ModelParams load_checkpoint(const std::filesystem::path& path, const FeatureSchema& schema,
                            NumericStats* stats = nullptr);

}  // namespace chorus
