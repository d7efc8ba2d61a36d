#pragma once

#include "rlhgnn/common.hpp"

#include <functional>
#include <vector>

namespace rlhgnn {

struct AdamConfig {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;  // decoupled: applied to the parameter, not the gradient
};

struct OptState {
  AdamConfig config;
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  long step = 0;

  static OptState for_params(const std::vector<const Matrix*>& params, const AdamConfig& config);
};

/// One bias-corrected adaptive-moment update of every parameter in place.
void optimizer_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
                    OptState& state);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_tensor = 0;
  Eigen::Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central differences on a seeded subsample of `samples` coordinates (all of
/// them when fewer exist). Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult finite_diff_check(const std::vector<Matrix*>& params,
                                  const std::vector<Matrix>& analytic,
                                  const std::function<double()>& loss, double epsilon,
                                  std::size_t samples, std::uint64_t seed, double floor = 1e-6);

}  // namespace rlhgnn
