#pragma once

// Training objectives over one mini-batch drawn from the exposure space.
//
// Every per-space mean is taken within the batch: |O| and |N| are the batch's
// clicked and un-clicked counts, and a term over a space absent from the
// batch is exactly 0. Inverse propensity weights use the predicted CTR,
// clamped below by IpwConfig::floor (and 1 - CTR likewise for the un-click
// space), and are detached from the graph by default.

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "chorus/autodiff.hpp"
#include "chorus/exposure_log.hpp"
#include "chorus/model.hpp"

namespace chorus {

// Soft labels 1 - sg(score) are clamped into [kSoftLabelFloor, 1 - kSoftLabelFloor].
inline constexpr double kSoftLabelFloor = 1e-6;

struct IpwConfig {
  double floor = 0.01;
  bool detach = true;

  void validate() const;
};

enum class Term : std::size_t {
  kCtr = 0,       // exposure-space CTR cross-entropy
  kCtcvr,         // exposure-space ctr*cvr vs o*r
  kCvrIpw,        // click-space CVR, weighted 1/ctr
  kCtuncvr,       // exposure-space ctr*uncvr vs o*(1-r)
  kUncvrIpw,      // click-space unCVR vs 1-r, weighted 1/ctr
  kAlignIpw,      // four mutual soft-label alignment terms
  kUncvrClick,    // click-space unCVR vs 1-r, unweighted
  kNiseSelf,      // un-click self pseudo-label bce(cvr, sg(cvr))
  kCfConstraint,  // exposure-space bce(cvr, 1 - sg(uncvr))
};
inline constexpr std::size_t kTermCount = 9;

const char* term_name(Term t);
std::span<const Term> all_terms();

struct TermWeights {
  std::array<double, kTermCount> term{};
  // Alignment sub-weights: cvr on O, cvr on N, uncvr on O, uncvr on N.
  std::array<double, 4> align{1.0, 1.0, 1.0, 1.0};

  double& operator[](Term t) { return term[static_cast<std::size_t>(t)]; }
  double operator[](Term t) const { return term[static_cast<std::size_t>(t)]; }

  bool active(Term t) const;
  std::vector<std::string> active_terms() const;
  void validate() const;
};

enum class Method { kChorus, kChorusWoNdm, kChorusWoSam, kEsmm, kEscm2Ipw, kNise, kDcmtLite };

class UnknownMethod : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Method parse_method(const std::string& tag);
const char* method_name(Method m);
std::span<const Method> all_methods();

// Term weights wiring each method. `lambda_ctr` weighs the auxiliary CTR loss.
TermWeights method_weights(Method m, double lambda_ctr = 1.0);

// Per-sample labels for a batch, as column vectors.
struct BatchLabels {
  ad::Vector click;
  ad::Vector conversion;

  std::size_t size() const { return static_cast<std::size_t>(click.size()); }
  std::size_t clicked() const;
};

BatchLabels batch_labels(const ExposureLog& log, std::span<const std::size_t> rows);
BatchLabels make_labels(std::span<const int> click, std::span<const int> conversion);

// -[y ln p + (1 - y) ln(1 - p)] with p clamped into the probability band.
double bce(double p, double y);

// o * (1 - r); a conversion without click is a funnel violation.
int ctuncvr_label(int click, int conversion);

ad::Var loss_ctr(const TowerOutputs& out, const BatchLabels& labels);
ad::Var loss_ctcvr(const TowerOutputs& out, const BatchLabels& labels);
ad::Var loss_cvr_ipw(const TowerOutputs& out, const BatchLabels& labels, const IpwConfig& ipw);
ad::Var loss_ctuncvr(const TowerOutputs& out, const BatchLabels& labels);
ad::Var loss_uncvr_ipw(const TowerOutputs& out, const BatchLabels& labels, const IpwConfig& ipw);
ad::Var loss_uncvr_click(const TowerOutputs& out, const BatchLabels& labels);
ad::Var loss_nise_self(const TowerOutputs& out, const BatchLabels& labels);
ad::Var loss_cf_constraint(const TowerOutputs& out, const BatchLabels& labels);

struct AlignTerms {
  ad::Var cvr_click;      // bce(cvr, 1 - sg(uncvr)) / ctr over O
  ad::Var cvr_unclick;    // bce(cvr, 1 - sg(uncvr)) / (1 - ctr) over N
  ad::Var uncvr_click;    // bce(uncvr, 1 - sg(cvr)) / ctr over O
  ad::Var uncvr_unclick;  // bce(uncvr, 1 - sg(cvr)) / (1 - ctr) over N
  ad::Var total;          // sub-weighted sum of the four
};

AlignTerms loss_align_ipw(const TowerOutputs& out, const BatchLabels& labels, const IpwConfig& ipw,
                          const std::array<double, 4>& sub_weights = {1.0, 1.0, 1.0, 1.0});

struct LossBundle {
  std::array<ad::Var, kTermCount> terms;
  AlignTerms align;
  TermWeights weights;
  ad::Var total;

  ad::Var operator[](Term t) const { return terms[static_cast<std::size_t>(t)]; }
};

// Computes every term on the batch and total = sum of weight * term over
// terms with positive weight; zero-weight terms are left out of the total.
LossBundle total_loss(const TowerOutputs& out, const BatchLabels& labels, const TermWeights& weights,
                      const IpwConfig& ipw);

// Weighted sum of precomputed scalar terms; exposed for composing terms
// computed elsewhere.
ad::Var combine_terms(std::span<const ad::Var> terms, std::span<const double> weights);

// Per-method total; equals total_loss(...).total under method_weights(m).
ad::Var baseline_total(Method m, const TowerOutputs& out, const BatchLabels& labels,
                       const IpwConfig& ipw = {}, double lambda_ctr = 1.0);

struct ObjectiveConfig {
  TermWeights weights = method_weights(Method::kChorus);
  IpwConfig ipw;
};

struct StepValues {
  std::array<double, kTermCount> terms{};
  double total = 0.0;
  // Extreme propensities seen in the batch, for diagnostics.
  double min_ctr = 0.0;
  double max_ctr = 0.0;
};

// Zeroes gradients, runs the forward pass over `rows`, assembles the
// objective and back-propagates once from the total. Gradients are left in
// the parameters.
StepValues batched_chorus_step(ModelParams& params, const FeatureCodec& codec, const ExposureLog& log,
                               std::span<const std::size_t> rows, const ObjectiveConfig& config);

}  // namespace chorus
