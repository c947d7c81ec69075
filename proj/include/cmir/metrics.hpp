#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/model.hpp"
#include "cmir/tensor.hpp"

namespace cmir {

/// Evaluation summary. Fields that are undefined for the input (e.g. binary
/// accuracy when every target is neutral) are left empty rather than zero.
struct MetricReport {
  std::optional<double> acc7;
  std::optional<double> acc2;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> mae;
  std::optional<double> corr;
  std::size_t true_pos = 0, false_pos = 0, true_neg = 0, false_neg = 0;
  std::size_t n = 0;
};

inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace detail {

inline int sentiment_class(double v) { return static_cast<int>(std::round(std::clamp(v, -3.0, 3.0))); }

inline void fill_binary(MetricReport& r) {
  const std::size_t total = r.true_pos + r.false_pos + r.true_neg + r.false_neg;
  if (total == 0) return;
  r.acc2 = static_cast<double>(r.true_pos + r.true_neg) / static_cast<double>(total);
  const double p = r.true_pos + r.false_pos == 0
                       ? 0.0
                       : static_cast<double>(r.true_pos) / static_cast<double>(r.true_pos + r.false_pos);
  const double q = r.true_pos + r.false_neg == 0
                       ? 0.0
                       : static_cast<double>(r.true_pos) / static_cast<double>(r.true_pos + r.false_neg);
  r.precision = p;
  r.recall = q;
  r.f1 = p + q == 0 ? 0.0 : 2 * p * q / (p + q);
}

inline void count(MetricReport& r, bool predicted_positive, bool actual_positive) {
  if (predicted_positive && actual_positive) ++r.true_pos;
  else if (predicted_positive) ++r.false_pos;
  else if (actual_positive) ++r.false_neg;
  else ++r.true_neg;
}

}  // namespace detail

/// Regression: Acc7 by round-and-clamp to [-3, 3]; Acc2/F1 over non-neutral
/// targets with positive meaning > 0; MAE and Pearson over all samples.
/// Classification: `pred` and `target` hold class ids; Acc2 is accuracy and
/// F1 is for class 1.
inline MetricReport compute_metrics(std::span<const double> pred, std::span<const double> target,
                                    Task task) {
  if (pred.size() != target.size()) {
    throw DimensionError("metrics: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(target.size()) + " targets");
  }
  MetricReport r;
  r.n = pred.size();
  if (r.n == 0) return r;
  if (task == Task::classification) {
    for (std::size_t i = 0; i < r.n; ++i) detail::count(r, pred[i] == 1.0, target[i] == 1.0);
    detail::fill_binary(r);
    return r;
  }
  std::size_t hits7 = 0;
  double abs_err = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    hits7 += detail::sentiment_class(pred[i]) == detail::sentiment_class(target[i]);
    abs_err += std::abs(pred[i] - target[i]);
    if (target[i] != 0.0) detail::count(r, pred[i] > 0, target[i] > 0);
  }
  r.acc7 = static_cast<double>(hits7) / static_cast<double>(r.n);
  r.mae = abs_err / static_cast<double>(r.n);
  r.corr = pearson(pred, target);
  detail::fill_binary(r);
  return r;
}

/// Regression scores from an Nx1 tensor, class ids by row argmax otherwise.
inline std::vector<double> decode_predictions(const Tensor& out, Task task) {
  std::vector<double> v(out.rows());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    if (task == Task::regression) {
      v[i] = out(i, 0);
      continue;
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < out.cols(); ++j)
      if (out(i, j) > out(i, best)) best = j;
    v[i] = static_cast<double>(best);
  }
  return v;
}

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 500; ++m) {
    const double mm = m;
    double num = mm * (b - mm) * x / ((a + 2 * mm - 1) * (a + 2 * mm));
    for (int pass = 0; pass < 2; ++pass) {
      d = 1.0 + num * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double delta = c * d;
      f *= delta;
      if (pass == 1 && std::abs(delta - 1.0) < eps) return std::exp(log_front) * f / a;
      num = -(a + mm) * (a + b + mm) * x / ((a + 2 * mm) * (a + 2 * mm + 1));
    }
  }
  return std::exp(log_front) * f / a;
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
inline double student_t_two_sided(double t, double df) {
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

/// Two-sided paired t-test on a - b. With zero variance of the differences
/// the p-value is 1 for identical means and 0 otherwise.
inline TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("paired_ttest: samples differ in length");
  if (a.size() < 2) throw ContractError("paired_ttest needs at least two pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  TTestResult r;
  r.df = n - 1.0;
  if (ss == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p_value = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  const double sd = std::sqrt(ss / r.df);
  r.t = mean / (sd / std::sqrt(n));
  r.p_value = student_t_two_sided(r.t, r.df);
  return r;
}

}  // namespace cmir
