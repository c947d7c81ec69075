#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cmir/rng.hpp"
#include "cmir/tensor.hpp"

namespace cmir::testing {

/// Largest relative disagreement between tape gradients and central finite
/// differences of `f` with respect to every element of every input.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double max_gradient_error(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> inputs,
                                 double h = 1e-6, double floor = 1e-3) {
  for (Tensor& t : inputs) {
    t.requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (Tensor& t : inputs) {
    auto values = t.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      Tape plus(false);
      const double fp = f(plus).item();
      values[i] = saved - h;
      Tape minus(false);
      const double fm = f(minus).item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = t.grad()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed,
                            double scale = 1.0) {
  Tensor t(rows, cols);
  rng::Stream s(rng::derive_key(seed, "test-tensor"));
  for (double& v : t.values()) v = scale * s.normal();
  return t;
}

}  // namespace cmir::testing
