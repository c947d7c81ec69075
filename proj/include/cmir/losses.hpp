#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/model.hpp"
#include "cmir/ops.hpp"
#include "cmir/tensor.hpp"

namespace cmir {

enum class PredictionLossKind { mse, mae, cross_entropy };

inline PredictionLossKind parse_prediction_loss(std::string_view s) {
  if (s == "mse") return PredictionLossKind::mse;
  if (s == "mae") return PredictionLossKind::mae;
  if (s == "cross_entropy" || s == "ce") return PredictionLossKind::cross_entropy;
  throw ConfigError("unknown prediction loss '" + std::string(s) + "'");
}

inline std::string to_string(PredictionLossKind k) {
  switch (k) {
    case PredictionLossKind::mse: return "mse";
    case PredictionLossKind::mae: return "mae";
    default: return "cross_entropy";
  }
}

/// How pairwise L1 distances are normalized. element_mean divides each pair's
/// L1 norm by the element count; raw_sum keeps the plain norm.
enum class InvarianceNorm { element_mean, raw_sum };

using VariantPair = std::pair<std::size_t, std::size_t>;

/// Batch-mean loss. For cross_entropy, `target` is an Nx1 column of integer
/// class ids and `pred` holds NxC logits.
inline Tensor prediction_loss(Tape& tape, const Tensor& pred, const Tensor& target,
                              PredictionLossKind kind) {
  if (pred.rows() != target.rows() || target.cols() != 1) {
    throw DimensionError("prediction " + pred.shape() + " vs target " + target.shape());
  }
  if (kind == PredictionLossKind::cross_entropy) {
    std::vector<std::size_t> ids(target.rows());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double v = target(i, 0);
      if (v < 0 || v != std::floor(v) || v >= static_cast<double>(pred.cols())) {
        throw DataError("class id " + std::to_string(v) + " out of range for " +
                        std::to_string(pred.cols()) + " classes");
      }
      ids[i] = static_cast<std::size_t>(v);
    }
    return scale(tape, mean_all(tape, pick(tape, log_softmax_rows(tape, pred), ids)), -1.0);
  }
  if (pred.cols() != 1) throw DimensionError("regression prediction must be Nx1, got " + pred.shape());
  Tensor diff = sub(tape, pred, target);
  return mean_all(tape, kind == PredictionLossKind::mse ? square(tape, diff) : abs(tape, diff));
}

/// Sum over pairs of the L1 distance between invariant representations.
inline Tensor invariance_loss_l1(Tape& tape, const std::vector<Tensor>& variants,
                                 const std::vector<VariantPair>& pairs,
                                 InvarianceNorm norm = InvarianceNorm::element_mean) {
  if (variants.empty()) throw EmptyInputError("invariance loss needs at least one variant");
  for (const Tensor& v : variants) {
    if (!v.same_shape(variants.front())) {
      throw DimensionError("variant shapes differ: " + variants.front().shape() + " vs " + v.shape());
    }
  }
  Tensor total = Tensor::scalar(0.0);
  for (auto [i, j] : pairs) {
    if (i >= variants.size() || j >= variants.size()) {
      throw ContractError("variant pair index out of range");
    }
    Tensor dist = abs(tape, sub(tape, variants[i], variants[j]));
    total = add(tape, total,
                norm == InvarianceNorm::element_mean ? mean_all(tape, dist) : sum_all(tape, dist));
  }
  return total;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Sum over pairs of the batch-mean symmetric KL between row softmaxes.
inline Tensor invariance_loss_kl(Tape& tape, const std::vector<Tensor>& logits,
                                 const std::vector<VariantPair>& pairs, Task task) {
  if (task != Task::classification) {
    throw ConfigError("KL invariance needs class distributions; not defined for regression");
  }
  if (logits.empty()) throw EmptyInputError("invariance loss needs at least one variant");
  std::vector<Tensor> logp;
  std::vector<Tensor> prob;
  for (const Tensor& l : logits) {
    if (!l.same_shape(logits.front())) {
      throw DimensionError("logit shapes differ: " + logits.front().shape() + " vs " + l.shape());
    }
    Tensor p = clamp_min(tape, softmax_rows(tape, l), kProbabilityFloor);
    prob.push_back(p);
    logp.push_back(log(tape, p));
  }
  const double inv_n = 1.0 / static_cast<double>(logits.front().rows());
  Tensor total = Tensor::scalar(0.0);
  for (auto [i, j] : pairs) {
    if (i >= logits.size() || j >= logits.size()) {
      throw ContractError("variant pair index out of range");
    }
    // KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)
    Tensor term = mul(tape, sub(tape, prob[i], prob[j]), sub(tape, logp[i], logp[j]));
    total = add(tape, total, scale(tape, sum_all(tape, term), inv_n));
  }
  return total;
}

/// (1/d) Nor(Z_inv) Nor(Z_spu)^T: entry (i, j) is the Pearson correlation
/// across features between sample i's invariant and sample j's spurious part.
inline Tensor correlation_matrix(Tape& tape, const Tensor& z_inv, const Tensor& z_spu) {
  if (!z_inv.same_shape(z_spu)) {
    throw DimensionError("correlation_matrix shapes differ: " + z_inv.shape() + " vs " + z_spu.shape());
  }
  Tensor c = matmul(tape, normalize_rows(tape, z_inv), transpose(tape, normalize_rows(tape, z_spu)));
  return scale(tape, c, 1.0 / static_cast<double>(z_inv.cols()));
}

/// Frobenius norm of diag(C) + alpha * offdiag(C).
inline Tensor orthogonality_loss(Tape& tape, const Tensor& c, double alpha) {
  if (c.rows() != c.cols()) throw DimensionError("orthogonality_loss needs a square matrix, got " + c.shape());
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("orthogonality alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  Tensor weights(c.rows(), c.cols(), alpha);
  for (std::size_t i = 0; i < c.rows(); ++i) weights(i, i) = 1.0;
  return frobenius_norm(tape, mul(tape, c, weights));
}

inline Tensor reconstruction_loss(Tape& tape, const Tensor& x, const Tensor& x_hat) {
  if (!x.same_shape(x_hat)) {
    throw DimensionError("reconstruction shapes differ: " + x.shape() + " vs " + x_hat.shape());
  }
  return mean_all(tape, square(tape, sub(tape, x, x_hat)));
}

struct LossWeights {
  double inv = 0.1;  ///< lambda1
  double dec = 0.001;  ///< lambda2
  double rec = 0.05;  ///< lambda3

  void validate() const {
    if (inv < 0 || dec < 0 || rec < 0) throw ConfigError("loss weights must be nonnegative");
  }
};

/// Scalar values of every term plus the differentiable total.
struct LossBreakdown {
  double pred = 0.0;
  std::vector<double> inv;
  std::vector<double> dec;
  std::vector<double> rec;
  double total = 0.0;
  LossWeights weights;
  double orth_alpha = 1.0;
  Tensor total_tensor;
};

/// L = L_pred + sum_m (l1 * inv[m] + l2 * dec[m] + l3 * rec[m]). Terms for a
/// modality may be omitted by passing empty vectors (treated as zero).
inline LossBreakdown total_objective(Tape& tape, const Tensor& pred_loss,
                                     const std::vector<Tensor>& inv, const std::vector<Tensor>& dec,
                                     const std::vector<Tensor>& rec, const LossWeights& weights,
                                     double orth_alpha = 1.0) {
  weights.validate();
  LossBreakdown out;
  out.weights = weights;
  out.orth_alpha = orth_alpha;
  out.pred = pred_loss.item();
  Tensor total = pred_loss;
  auto fold = [&](const std::vector<Tensor>& terms, double w, std::vector<double>& values) {
    for (const Tensor& t : terms) {
      values.push_back(t.item());
      if (w != 0.0) total = add(tape, total, scale(tape, t, w));
    }
  };
  fold(inv, weights.inv, out.inv);
  fold(dec, weights.dec, out.dec);
  fold(rec, weights.rec, out.rec);
  out.total_tensor = total;
  out.total = total.item();
  return out;
}

}  // namespace cmir
