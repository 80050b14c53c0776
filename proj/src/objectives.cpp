#include "chorus/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace chorus {

namespace {

constexpr std::array<Term, kTermCount> kAllTerms = {
    Term::kCtr,      Term::kCtcvr,      Term::kCvrIpw,   Term::kCtuncvr,      Term::kUncvrIpw,
    Term::kAlignIpw, Term::kUncvrClick, Term::kNiseSelf, Term::kCfConstraint,
};

constexpr std::array<Method, 7> kAllMethods = {
    Method::kChorus, Method::kChorusWoNdm, Method::kChorusWoSam, Method::kEsmm,
    Method::kEscm2Ipw, Method::kNise, Method::kDcmtLite,
};

ad::Graph& graph_of(const TowerOutputs& out) { return *out.ctr.graph(); }

void require_matching(const TowerOutputs& out, const BatchLabels& labels) {
  if (static_cast<std::size_t>(out.ctr.rows()) != labels.size()) {
    throw std::invalid_argument("objective: " + std::to_string(out.ctr.rows()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  }
}

ad::Var label_column(ad::Graph& g, const ad::Vector& v) { return g.constant(ad::Matrix(v)); }

// Mean of a per-sample column over the samples selected by a 0/1 mask; 0
// when the mask is empty.
ad::Var space_mean(ad::Var per_sample, const ad::Vector& mask) {
  const double count = mask.sum();
  if (count == 0.0) return per_sample.graph()->scalar_constant(0.0);
  return ad::weighted_sum(per_sample, mask / count);
}

ad::Var exposure_mean(ad::Var per_sample) {
  if (per_sample.rows() == 0) throw std::invalid_argument("objective: empty batch");
  return ad::mean(per_sample);
}

ad::Var propensity(const TowerOutputs& out, const IpwConfig& ipw) {
  return ipw.detach ? ad::stop_gradient(out.ctr) : out.ctr;
}

ad::Var click_weight(const TowerOutputs& out, const IpwConfig& ipw) {
  return ad::reciprocal(ad::clamp(propensity(out, ipw), ipw.floor, 1.0));
}

ad::Var unclick_weight(const TowerOutputs& out, const IpwConfig& ipw) {
  return ad::reciprocal(ad::clamp(ad::one_minus(propensity(out, ipw)), ipw.floor, 1.0));
}

ad::Var soft_complement(ad::Var score) {
  return ad::clamp(ad::one_minus(ad::stop_gradient(score)), kSoftLabelFloor, 1.0 - kSoftLabelFloor);
}

ad::Vector unclick_mask(const BatchLabels& labels) { return (1.0 - labels.click.array()).matrix(); }

}  // namespace

void IpwConfig::validate() const {
  if (!(floor > 0.0 && floor < 0.5)) throw std::invalid_argument("propensity floor must lie in (0, 0.5)");
}

const char* term_name(Term t) {
  switch (t) {
    case Term::kCtr: return "ctr";
    case Term::kCtcvr: return "ctcvr";
    case Term::kCvrIpw: return "cvr_ipw";
    case Term::kCtuncvr: return "ctuncvr";
    case Term::kUncvrIpw: return "uncvr_ipw";
    case Term::kAlignIpw: return "align_ipw";
    case Term::kUncvrClick: return "uncvr_click";
    case Term::kNiseSelf: return "nise_self";
    case Term::kCfConstraint: return "cf_constraint";
  }
  return "unknown";
}

std::span<const Term> all_terms() { return kAllTerms; }

bool TermWeights::active(Term t) const {
  if ((*this)[t] <= 0.0) return false;
  if (t == Term::kAlignIpw) {
    return std::any_of(align.begin(), align.end(), [](double w) { return w > 0.0; });
  }
  return true;
}

std::vector<std::string> TermWeights::active_terms() const {
  std::vector<std::string> out;
  for (Term t : kAllTerms) {
    if (!active(t)) continue;
    if (t == Term::kAlignIpw) {
      static constexpr const char* kParts[4] = {"align_cvr_click", "align_cvr_unclick", "align_uncvr_click",
                                                "align_uncvr_unclick"};
      for (std::size_t k = 0; k < 4; ++k) {
        if (align[k] > 0.0) out.emplace_back(kParts[k]);
      }
    } else {
      out.emplace_back(term_name(t));
    }
  }
  return out;
}

void TermWeights::validate() const {
  for (Term t : kAllTerms) {
    if (!((*this)[t] >= 0.0) || !std::isfinite((*this)[t])) {
      throw std::invalid_argument(std::string("weight for term '") + term_name(t) + "' must be non-negative");
    }
  }
  for (double w : align) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("alignment weights must be non-negative");
  }
}

Method parse_method(const std::string& tag) {
  for (Method m : kAllMethods) {
    if (tag == method_name(m)) return m;
  }
  throw UnknownMethod("unknown method '" + tag + "'");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::kChorus: return "chorus";
    case Method::kChorusWoNdm: return "chorus_wo_ndm";
    case Method::kChorusWoSam: return "chorus_wo_sam";
    case Method::kEsmm: return "esmm";
    case Method::kEscm2Ipw: return "escm2_ipw";
    case Method::kNise: return "nise";
    case Method::kDcmtLite: return "dcmt_lite";
  }
  return "unknown";
}

std::span<const Method> all_methods() { return kAllMethods; }

TermWeights method_weights(Method m, double lambda_ctr) {
  TermWeights w;
  w[Term::kCtr] = lambda_ctr;
  w[Term::kCtcvr] = 1.0;
  switch (m) {
    case Method::kChorus:
      w[Term::kCvrIpw] = w[Term::kCtuncvr] = w[Term::kUncvrIpw] = w[Term::kAlignIpw] = 1.0;
      break;
    case Method::kChorusWoSam:
      w[Term::kCvrIpw] = w[Term::kCtuncvr] = w[Term::kUncvrIpw] = w[Term::kAlignIpw] = 1.0;
      w.align = {0.0, 0.0, 0.0, 0.0};
      break;
    case Method::kChorusWoNdm:
      // unCVR learns from 1 - r on clicked samples instead of the CTunCVR task.
      w[Term::kCvrIpw] = w[Term::kAlignIpw] = w[Term::kUncvrClick] = 1.0;
      break;
    case Method::kEsmm:
      break;
    case Method::kEscm2Ipw:
      w[Term::kCvrIpw] = 1.0;
      break;
    case Method::kNise:
      w[Term::kCvrIpw] = w[Term::kNiseSelf] = 1.0;
      break;
    case Method::kDcmtLite:
      // The unCVR head serves as the counterfactual tower.
      w[Term::kCvrIpw] = w[Term::kUncvrClick] = w[Term::kCfConstraint] = 1.0;
      break;
  }
  return w;
}

std::size_t BatchLabels::clicked() const { return static_cast<std::size_t>(click.sum()); }

BatchLabels batch_labels(const ExposureLog& log, std::span<const std::size_t> rows) {
  BatchLabels b;
  b.click.resize(static_cast<Eigen::Index>(rows.size()));
  b.conversion.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ExposureRecord& r = log.records.at(rows[i]);
    b.click(static_cast<Eigen::Index>(i)) = r.click;
    b.conversion(static_cast<Eigen::Index>(i)) = r.conversion;
  }
  return b;
}

BatchLabels make_labels(std::span<const int> click, std::span<const int> conversion) {
  if (click.size() != conversion.size()) throw std::invalid_argument("label arrays differ in length");
  BatchLabels b;
  b.click.resize(static_cast<Eigen::Index>(click.size()));
  b.conversion.resize(static_cast<Eigen::Index>(click.size()));
  for (std::size_t i = 0; i < click.size(); ++i) {
    ctuncvr_label(click[i], conversion[i]);  // validates the funnel
    b.click(static_cast<Eigen::Index>(i)) = click[i];
    b.conversion(static_cast<Eigen::Index>(i)) = conversion[i];
  }
  return b;
}

double bce(double p, double y) {
  const double q = std::clamp(p, kProbFloor, kProbCeil);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

int ctuncvr_label(int click, int conversion) {
  if ((click != 0 && click != 1) || (conversion != 0 && conversion != 1)) {
    throw std::invalid_argument("labels must be binary");
  }
  if (conversion > click) throw std::invalid_argument("funnel violation: conversion without click");
  return click * (1 - conversion);
}

ad::Var loss_ctr(const TowerOutputs& out, const BatchLabels& labels) {
  require_matching(out, labels);
  return exposure_mean(ad::bce(out.ctr, label_column(graph_of(out), labels.click)));
}

ad::Var loss_ctcvr(const TowerOutputs& out, const BatchLabels& labels) {
  require_matching(out, labels);
  const ad::Vector target = labels.click.cwiseProduct(labels.conversion);
  return exposure_mean(ad::bce(out.ctcvr, label_column(graph_of(out), target)));
}

ad::Var loss_cvr_ipw(const TowerOutputs& out, const BatchLabels& labels, const IpwConfig& ipw) {
  require_matching(out, labels);
  const ad::Var per_sample = ad::bce(out.cvr, label_column(graph_of(out), labels.conversion));
  return space_mean(ad::mul(per_sample, click_weight(out, ipw)), labels.click);
}

ad::Var loss_ctuncvr(const TowerOutputs& out, const BatchLabels& labels) {
  require_matching(out, labels);
  const ad::Vector target = labels.click.cwiseProduct((1.0 - labels.conversion.array()).matrix());
  return exposure_mean(ad::bce(out.ctuncvr, label_column(graph_of(out), target)));
}

ad::Var loss_uncvr_ipw(const TowerOutputs& out, const BatchLabels& labels, const IpwConfig& ipw) {
  require_matching(out, labels);
  const ad::Vector target = (1.0 - labels.conversion.array()).matrix();
  const ad::Var per_sample = ad::bce(out.uncvr, label_column(graph_of(out), target));
  return space_mean(ad::mul(per_sample, click_weight(out, ipw)), labels.click);
}

ad::Var loss_uncvr_click(const TowerOutputs& out, const BatchLabels& labels) {
  require_matching(out, labels);
  const ad::Vector target = (1.0 - labels.conversion.array()).matrix();
  return space_mean(ad::bce(out.uncvr, label_column(graph_of(out), target)), labels.click);
}

ad::Var loss_nise_self(const TowerOutputs& out, const BatchLabels& labels) {
  require_matching(out, labels);
  return space_mean(ad::bce(out.cvr, ad::stop_gradient(out.cvr)), unclick_mask(labels));
}

ad::Var loss_cf_constraint(const TowerOutputs& out, const BatchLabels& labels) {
  require_matching(out, labels);
  return exposure_mean(ad::bce(out.cvr, soft_complement(out.uncvr)));
}

AlignTerms loss_align_ipw(const TowerOutputs& out, const BatchLabels& labels, const IpwConfig& ipw,
                          const std::array<double, 4>& sub_weights) {
  require_matching(out, labels);
  const ad::Vector unclick = unclick_mask(labels);
  const ad::Var w_click = click_weight(out, ipw);
  const ad::Var w_unclick = unclick_weight(out, ipw);
  const ad::Var cvr_err = ad::bce(out.cvr, soft_complement(out.uncvr));
  const ad::Var uncvr_err = ad::bce(out.uncvr, soft_complement(out.cvr));

  AlignTerms a;
  a.cvr_click = space_mean(ad::mul(cvr_err, w_click), labels.click);
  a.cvr_unclick = space_mean(ad::mul(cvr_err, w_unclick), unclick);
  a.uncvr_click = space_mean(ad::mul(uncvr_err, w_click), labels.click);
  a.uncvr_unclick = space_mean(ad::mul(uncvr_err, w_unclick), unclick);
  const std::array<ad::Var, 4> parts = {a.cvr_click, a.cvr_unclick, a.uncvr_click, a.uncvr_unclick};
  a.total = combine_terms(parts, sub_weights);
  return a;
}

ad::Var combine_terms(std::span<const ad::Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("combine_terms: size mismatch");
  if (terms.empty()) throw std::invalid_argument("combine_terms: no terms");
  ad::Graph& g = *terms.front().graph();
  ad::Var total;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (weights[k] < 0.0) throw std::invalid_argument("combine_terms: negative weight");
    if (weights[k] == 0.0) continue;
    const ad::Var scaled = weights[k] == 1.0 ? terms[k] : ad::scale(terms[k], weights[k]);
    total = total.valid() ? ad::add(total, scaled) : scaled;
  }
  return total.valid() ? total : g.scalar_constant(0.0);
}

LossBundle total_loss(const TowerOutputs& out, const BatchLabels& labels, const TermWeights& weights,
                      const IpwConfig& ipw) {
  weights.validate();
  ipw.validate();
  LossBundle b;
  b.weights = weights;
  auto set = [&b](Term t, ad::Var v) { b.terms[static_cast<std::size_t>(t)] = v; };
  set(Term::kCtr, loss_ctr(out, labels));
  set(Term::kCtcvr, loss_ctcvr(out, labels));
  set(Term::kCvrIpw, loss_cvr_ipw(out, labels, ipw));
  set(Term::kCtuncvr, loss_ctuncvr(out, labels));
  set(Term::kUncvrIpw, loss_uncvr_ipw(out, labels, ipw));
  b.align = loss_align_ipw(out, labels, ipw, weights.align);
  set(Term::kAlignIpw, b.align.total);
  set(Term::kUncvrClick, loss_uncvr_click(out, labels));
  set(Term::kNiseSelf, loss_nise_self(out, labels));
  set(Term::kCfConstraint, loss_cf_constraint(out, labels));
  b.total = combine_terms(b.terms, weights.term);
  return b;
}

ad::Var baseline_total(Method m, const TowerOutputs& out, const BatchLabels& labels, const IpwConfig& ipw,
                       double lambda_ctr) {
  return total_loss(out, labels, method_weights(m, lambda_ctr), ipw).total;
}

StepValues batched_chorus_step(ModelParams& params, const FeatureCodec& codec, const ExposureLog& log,
                               std::span<const std::size_t> rows, const ObjectiveConfig& config) {
  if (rows.empty()) throw std::invalid_argument("batched step over an empty batch");
  params.zero_grad();
  ad::Graph graph;
  const ad::Var x = codec.encode(graph, params.embeddings, log, rows);
  const TowerOutputs out = predict(graph, params, x);
  const BatchLabels labels = batch_labels(log, rows);
  const LossBundle bundle = total_loss(out, labels, config.weights, config.ipw);

  StepValues v;
  for (std::size_t k = 0; k < kTermCount; ++k) v.terms[k] = bundle.terms[k].scalar();
  v.total = bundle.total.scalar();
  v.min_ctr = out.ctr.value().minCoeff();
  v.max_ctr = out.ctr.value().maxCoeff();
  if (std::isfinite(v.total)) graph.backward(bundle.total);
  return v;
}

}  // namespace chorus
