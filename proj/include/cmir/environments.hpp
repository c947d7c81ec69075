#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/losses.hpp"
#include "cmir/rng.hpp"
#include "cmir/tensor.hpp"

namespace cmir {

/// Graded noise levels for K virtual environments: level e is alpha1 * e.
struct NoiseSchedule {
  std::size_t environments = 1;
  double alpha1 = 0.1;
  std::vector<double> coefficients;
};

inline NoiseSchedule make_schedule(std::size_t environments, double alpha1) {
  if (environments == 0) throw ConfigError("environment count K must be at least 1");
  if (alpha1 < 0) throw ConfigError("base noise coefficient must be nonnegative");
  NoiseSchedule s{environments, alpha1, {}};
  for (std::size_t e = 1; e <= environments; ++e) s.coefficients.push_back(alpha1 * static_cast<double>(e));
  return s;
}

/// The unperturbed input followed by one noisy copy per environment.
struct EnvironmentBatch {
  std::vector<Tensor> variants;
  std::uint64_t seed = 0;

  std::size_t size() const { return variants.size(); }
};

/// Variant e (1..K) = X + coefficients[e-1] * eps with eps ~ N(0, I). Noise for
/// element i of environment e depends only on (seed, e, i). Variant 0 is X
/// itself (the same handle). Variants stay differentiable with respect to X.
inline EnvironmentBatch perturb(Tape& tape, const Tensor& x, const NoiseSchedule& schedule,
                                std::uint64_t seed) {
  EnvironmentBatch batch;
  batch.seed = seed;
  batch.variants.push_back(x);
  for (std::size_t e = 1; e <= schedule.environments; ++e) {
    const double alpha = schedule.coefficients[e - 1];
    if (alpha == 0.0) {
      batch.variants.push_back(x);
      continue;
    }
    const std::uint64_t key = rng::derive_key(seed, static_cast<std::uint64_t>(e));
    Tensor noise(x.rows(), x.cols());
    auto nv = noise.values();
    for (std::size_t i = 0; i < nv.size(); ++i) nv[i] = alpha * rng::normal(key, i);
    batch.variants.push_back(add(tape, x, noise));
  }
  return batch;
}

inline EnvironmentBatch perturb(const Tensor& x, const NoiseSchedule& schedule, std::uint64_t seed) {
  Tape tape(false);
  return perturb(tape, x, schedule, seed);
}

/// Per-sample environment assignment: returns for each row one environment
/// drawn uniformly from 1..K, as an alternative to using every variant.
inline std::vector<std::size_t> assign_environments(std::size_t rows, std::size_t environments,
                                                    std::uint64_t seed) {
  if (environments == 0) throw ConfigError("environment count K must be at least 1");
  rng::Stream s(rng::derive_key(seed, "env-assign"));
  std::vector<std::size_t> out(rows);
  for (auto& e : out) e = 1 + s.below(environments);
  return out;
}

/// All unordered pairs (i < j) over variant indices 0..K.
inline std::vector<VariantPair> pair_indices(std::size_t environments) {
  if (environments == 0) throw ConfigError("environment count K must be at least 1");
  std::vector<VariantPair> out;
  for (std::size_t i = 0; i <= environments; ++i)
    for (std::size_t j = i + 1; j <= environments; ++j) out.emplace_back(i, j);
  return out;
}

}  // namespace cmir
