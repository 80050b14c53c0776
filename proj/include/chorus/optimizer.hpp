#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "chorus/autodiff.hpp"

namespace chorus::ad {

enum class OptimizerKind { kAdam, kSgd };

struct OptimizerHyper {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step = 0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(std::string parameter, std::uint64_t step);
  const std::string& parameter() const { return parameter_; }
  std::uint64_t step() const { return step_; }

 private:
  std::string parameter_;
  std::uint64_t step_;
};

// Applies one update using each parameter's accumulated grad. The state is
// lazily sized on the first call and must keep seeing the same parameter list.
// Gradients are validated before any parameter is touched.
void optimizer_step(std::span<Parameter* const> params, OptimizerState& state,
                    const OptimizerHyper& hyper);

}  // namespace chorus::ad
