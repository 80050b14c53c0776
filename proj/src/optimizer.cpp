#include "chorus/optimizer.hpp"

#include <cmath>

namespace chorus::ad {

NonFiniteGradient::NonFiniteGradient(std::string parameter, std::uint64_t step)
    : std::runtime_error("non-finite gradient for parameter '" + parameter + "' at step " +
                         std::to_string(step)),
      parameter_(std::move(parameter)),
      step_(step) {}

void optimizer_step(std::span<Parameter* const> params, OptimizerState& state,
                    const OptimizerHyper& hyper) {
  const std::uint64_t next_step = state.step + 1;
  for (const Parameter* p : params) {
    if (!p->grad.allFinite()) throw NonFiniteGradient(p->name, next_step);
  }

  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("optimizer_step: parameter list changed between steps");
  }

  state.step = next_step;
  if (hyper.kind == OptimizerKind::kSgd) {
    for (Parameter* p : params) p->value -= hyper.learning_rate * p->grad;
    return;
  }

  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * p.grad;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= hyper.learning_rate * (m.array() / correction1) /
                       ((v.array() / correction2).sqrt() + hyper.epsilon);
  }
}

}  // namespace chorus::ad
