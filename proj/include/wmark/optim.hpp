#pragma once

#include "wmark/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace wmark {

/// Adam with bias correction. Moment buffers are sized lazily on the first step.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState with(double lr, double beta1 = 0.5, double beta2 = 0.999, double epsilon = 1e-8) {
    AdamState s;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    return s;
  }
};

/// Applies one Adam update to every parameter and zeroes their gradients.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
  for (const auto& p : params) {
    if (!p.has_grad()) throw std::logic_error("adam_step: parameter of shape " + shape_str(p.shape()) + " has no gradient");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::logic_error("adam_step: parameter list changed between steps");
  }
  ++state.step_count;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  const double step = state.lr / c1;
  const double inv_c2 = 1.0 / c2;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.size()) throw std::logic_error("adam_step: moment buffer shape mismatch");
    auto w = p.data();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + state.epsilon);
      g[i] = 0.0;
    }
  }
}

/// Clamps every parameter value into [-limit, limit].
inline void clamp_weights(std::vector<Tensor>& params, double limit) {
  if (!(limit > 0.0)) throw std::invalid_argument("clamp_weights: limit must be positive");
  for (auto& p : params)
    for (auto& v : p.data()) v = std::min(std::max(v, -limit), limit);
}

inline void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace wmark
