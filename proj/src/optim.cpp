#include "rlhgnn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace rlhgnn {

OptState OptState::for_params(const std::vector<const Matrix*>& params, const AdamConfig& config) {
  OptState s;
  s.config = config;
  for (const auto* p : params) {
    s.first.push_back(Matrix::Zero(p->rows(), p->cols()));
    s.second.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  return s;
}

void optimizer_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
                    OptState& state) {
  if (params.size() != grads.size() || params.size() != state.first.size())
    throw Error("optimizer_step: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols() ||
        state.first[i].rows() != grads[i].rows() || state.first[i].cols() != grads[i].cols())
      throw Error("optimizer_step: shape mismatch at tensor " + std::to_string(i));
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_finite(grads[i], "gradient");
    auto& m = state.first[i];
    auto& v = state.second[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i].cwiseAbs2();
    auto& p = *params[i];
    p.array() -= c.learning_rate * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon) +
                                    c.weight_decay * p.array());
  }
}

GradCheckResult finite_diff_check(const std::vector<Matrix*>& params,
                                  const std::vector<Matrix>& analytic,
                                  const std::function<double()>& loss, double epsilon,
                                  std::size_t samples, std::uint64_t seed, double floor) {
  if (!(epsilon > 0.0)) throw Error("finite_diff_check: epsilon must be positive");
  if (params.size() != analytic.size()) throw Error("finite_diff_check: gradient count mismatch");
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (analytic[t].size() != params[t]->size()) throw Error("finite_diff_check: shape mismatch");
    for (Eigen::Index i = 0; i < params[t]->size(); ++i) coords.emplace_back(t, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > samples) coords.resize(samples);

  GradCheckResult r;
  for (auto [t, i] : coords) {
    double& x = params[t]->data()[i];
    const double saved = x;
    x = saved + epsilon;
    const double up = loss();
    x = saved - epsilon;
    const double down = loss();
    x = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw Error("finite_diff_check: non-finite loss");
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[t].data()[i];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (err > r.max_relative_error || r.coordinates == 0) {
      r.max_relative_error = std::max(err, r.max_relative_error);
      r.worst_tensor = t;
      r.worst_index = i;
      r.worst_analytic = a;
      r.worst_numeric = numeric;
    }
    ++r.coordinates;
  }
  return r;
}

}  // namespace rlhgnn
