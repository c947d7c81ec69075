#pragma once

#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/losses.hpp"
#include "cmir/metrics.hpp"
#include "cmir/model.hpp"
#include "cmir/optim.hpp"
#include "cmir/rng.hpp"
#include "cmir/scm.hpp"

// Probing frozen representations: a fresh two-layer MLP is fitted on the
// invariant or spurious half of every modality's encoding.

namespace cmir {

enum class ProbeTarget { environment, label };
enum class ProbeInput { invariant, spurious };

inline ProbeTarget parse_probe_target(std::string_view s) {
  if (s == "env" || s == "environment") return ProbeTarget::environment;
  if (s == "label") return ProbeTarget::label;
  throw ConfigError("unknown probe target '" + std::string(s) + "' (env|label)");
}
inline ProbeInput parse_probe_input(std::string_view s) {
  if (s == "inv" || s == "invariant") return ProbeInput::invariant;
  if (s == "spu" || s == "spurious") return ProbeInput::spurious;
  throw ConfigError("unknown probe input '" + std::string(s) + "' (inv|spu)");
}
inline std::string to_string(ProbeTarget t) { return t == ProbeTarget::environment ? "env" : "label"; }
inline std::string to_string(ProbeInput i) { return i == ProbeInput::invariant ? "inv" : "spu"; }

struct ProbeConfig {
  std::size_t hidden = 64;
  std::size_t steps = 200;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  ProbeTarget target = ProbeTarget::label;
  ProbeInput input = ProbeInput::invariant;
  std::optional<double> mse;           ///< environment target
  std::optional<MetricReport> report;  ///< label target
  std::vector<std::string> warnings;
  bool model_untouched = true;  ///< parameters bit-identical before and after
  ProbeConfig config;
};

/// Concatenated invariant or spurious encodings of all modalities (N x M*d).
inline Tensor representations(const CmirModel& model, const Split& sp, ProbeInput input) {
  Tape tape = Tape::inference();
  std::vector<Tensor> parts;
  for (std::size_t m = 0; m < model.modalities(); ++m) {
    DisentangledPair z = model.encode(tape, m, model.adapt(tape, m, sp.modalities[m]));
    parts.push_back(input == ProbeInput::invariant ? z.invariant : z.spurious);
  }
  return concat_cols(tape, parts).clone();
}

namespace detail {

inline std::vector<double> parameter_snapshot(const CmirModel& model) {
  std::vector<double> out;
  for (const auto& p : model.named_parameters()) {
    out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  }
  return out;
}

inline bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

inline Tensor column(const std::vector<double>& v) { return Tensor(v.size(), 1, v); }

}  // namespace detail

/// Fits the probe on `fit` and scores it on `eval`. Environment probes regress
/// the environment's spurious strength (MSE); label probes use the task loss.
inline ProbeResult probe(const CmirModel& model, const Split& fit, const Split& eval, Task task,
                         ProbeTarget target, ProbeInput input, const ProbeConfig& config = {},
                         bool model_trained = true) {
  if (fit.size() < 2 || eval.size() == 0) throw EmptyInputError("probe needs non-empty fit and eval splits");
  ProbeResult result;
  result.target = target;
  result.input = input;
  result.config = config;
  if (!model_trained) result.warnings.push_back("model is untrained; probe scores reflect random features");
  const auto before = detail::parameter_snapshot(model);

  const Tensor x_fit = representations(model, fit, input);
  const Tensor x_eval = representations(model, eval, input);
  const bool classify = target == ProbeTarget::label && task == Task::classification;
  const Tensor y_fit = detail::column(target == ProbeTarget::environment ? fit.env_gamma : fit.labels);
  const Tensor y_eval = detail::column(target == ProbeTarget::environment ? eval.env_gamma : eval.labels);
  const PredictionLossKind loss = classify ? PredictionLossKind::cross_entropy : PredictionLossKind::mse;

  rng::Stream stream(rng::derive_key(config.seed, "probe-init"));
  const Mlp head(x_fit.cols(), config.hidden, classify ? 2 : 1, 2, stream);
  std::vector<Tensor> params;
  for (const Linear& l : head.layers) {
    params.push_back(l.weight);
    params.push_back(l.bias);
  }
  AdamWState opt;
  opt.learning_rate = config.learning_rate;
  for (std::size_t step = 0; step < config.steps; ++step) {
    Tape tape;
    Tensor l = prediction_loss(tape, head(tape, x_fit), y_fit, loss);
    tape.backward(l);
    adamw_step(params, opt);
    zero_grads(params);
  }

  Tape tape = Tape::inference();
  const Tensor out = head(tape, x_eval);
  if (target == ProbeTarget::environment) {
    double se = 0.0;
    for (std::size_t i = 0; i < out.rows(); ++i) se += (out(i, 0) - y_eval(i, 0)) * (out(i, 0) - y_eval(i, 0));
    result.mse = se / static_cast<double>(out.rows());
  } else {
    result.report = compute_metrics(decode_predictions(out, task), eval.labels, task);
  }
  result.model_untouched = detail::bit_equal(before, detail::parameter_snapshot(model));
  if (!result.model_untouched) throw ContractError("probe modified the frozen model");
  return result;
}

/// Rows of `a` followed by rows of `b`.
inline Split concat_splits(const Split& a, const Split& b, std::string name) {
  if (a.modalities.size() != b.modalities.size()) throw ArityError("splits have different modality counts");
  Split out;
  out.name = std::move(name);
  for (std::size_t m = 0; m < a.modalities.size(); ++m) {
    Tensor stacked(a.size() + b.size(), a.modalities[m].cols());
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < stacked.cols(); ++j) stacked(i, j) = a.modalities[m](i, j);
    for (std::size_t i = 0; i < b.size(); ++i)
      for (std::size_t j = 0; j < stacked.cols(); ++j) stacked(a.size() + i, j) = b.modalities[m](i, j);
    out.modalities.push_back(stacked);
  }
  auto cat = [](auto x, const auto& y) {
    x.insert(x.end(), y.begin(), y.end());
    return x;
  };
  out.labels = cat(a.labels, b.labels);
  out.envs = cat(a.envs, b.envs);
  out.env_gamma = cat(a.env_gamma, b.env_gamma);
  return out;
}

/// Seeded split of the rows into two halves (first gets floor(n/2)).
inline std::pair<Split, Split> halve(const Split& sp, std::uint64_t seed) {
  std::vector<std::size_t> idx(sp.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng::Stream(rng::derive_key(seed, "probe-halve")).shuffle(idx);
  auto take = [&](std::size_t from, std::size_t to, std::string name) {
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(from),
                                  idx.begin() + static_cast<std::ptrdiff_t>(to));
    Split out;
    out.name = std::move(name);
    out.modalities = sp.gather(part);
    for (std::size_t i : part) {
      out.labels.push_back(sp.labels[i]);
      out.envs.push_back(sp.envs[i]);
      out.env_gamma.push_back(sp.env_gamma[i]);
    }
    return out;
  };
  const std::size_t half = sp.size() / 2;
  return {take(0, half, sp.name + ".a"), take(half, sp.size(), sp.name + ".b")};
}

/// Default protocol on a generated dataset. Environment probes need more than
/// one spurious strength, so they are fitted and scored on disjoint halves of
/// train + test_ood. Label probes are fitted on train and scored on test_ood.
inline ProbeResult probe(const CmirModel& model, const Dataset& ds, ProbeTarget target, ProbeInput input,
                         const ProbeConfig& config = {}, bool model_trained = true) {
  const Task task = ds.config.task;
  if (target == ProbeTarget::environment) {
    auto [fit, eval] = halve(concat_splits(ds.train, ds.test_ood, "train+test_ood"), config.seed);
    return probe(model, fit, eval, task, target, input, config, model_trained);
  }
  return probe(model, ds.train, ds.test_ood, task, target, input, config, model_trained);
}

}  // namespace cmir
