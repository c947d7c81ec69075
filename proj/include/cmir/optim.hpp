#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/tensor.hpp"

namespace cmir {

/// AdamW with decoupled weight decay. beta1/beta2/eps are the usual defaults.
struct AdamWState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

/// One update of every parameter from its current gradient. Gradients are
/// left as they are; callers zero them.
inline void adamw_step(std::span<Tensor> params, AdamWState& state) {
  for (const Tensor& p : params) {
    if (!p.has_grad()) throw ContractError("adamw_step: parameter " + p.shape() + " has no gradient");
  }
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adamw_step: parameter list changed between steps");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.size()) throw ContractError("adamw_step: moment buffer shape mismatch");
    auto w = p.values();
    const auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= state.learning_rate * state.weight_decay * w[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      w[i] -= state.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

inline void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace cmir
