#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cmir/errors.hpp"
#include "cmir/tensor.hpp"

// Differentiable operations over Tensor. Each function evaluates eagerly and,
// when the tape is recording and some input requires a gradient, registers
// its backward rule on the tape.

namespace cmir {

enum class ElementwiseOp { add, sub, mul, relu, abs, square };
enum class ReduceOp { mean_all, sum_all, mean_axis0 };

namespace detail {

inline double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace detail

/// a[NxK] * b[KxD]
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions differ: " + a.shape() + " x " + b.shape());
  }
  const std::size_t n = a.rows(), k = a.cols(), d = b.cols();
  Tensor out(n, d);
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) ov[i * d + j] += aip * bv[p * d + j];
    }
  }
  tape.record(out, {a, b}, [a, b, out, n, k, d]() mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      const auto bv = b.values();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < d; ++j) s += g[i * d + j] * bv[p * d + j];
          ga[i * k + p] += s;
        }
    }
    if (b.requires_grad()) {
      // Summed locally first so repeated sweeps add identical increments.
      std::vector<double> local(k * d, 0.0);
      const auto av = a.values();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < d; ++j) local[p * d + j] += aip * g[i * d + j];
        }
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < local.size(); ++i) gb[i] += local[i];
    }
  });
  return out;
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
  tape.record(out, {a}, [a, out, r, c]() mutable {
    auto ga = a.grad_buffer();
    const auto g = out.grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
  return out;
}

/// Elementwise op. Binary kinds accept equal shapes or a 1xD operand that is
/// broadcast over the rows of the other.
inline Tensor elementwise(Tape& tape, ElementwiseOp op, const Tensor& a,
                          const Tensor* b = nullptr) {
  const bool binary =
      op == ElementwiseOp::add || op == ElementwiseOp::sub || op == ElementwiseOp::mul;
  if (binary != (b != nullptr)) {
    throw ContractError("elementwise: operand count does not match operation");
  }
  if (!binary) {
    Tensor out(a.rows(), a.cols());
    const auto av = a.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      switch (op) {
        case ElementwiseOp::relu: ov[i] = av[i] > 0 ? av[i] : 0.0; break;
        case ElementwiseOp::abs: ov[i] = std::abs(av[i]); break;
        default: ov[i] = av[i] * av[i]; break;
      }
    }
    tape.record(out, {a}, [a, out, op]() mutable {
      auto ga = a.grad_buffer();
      const auto g = out.grad();
      const auto av = a.values();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        switch (op) {
          case ElementwiseOp::relu: ga[i] += av[i] > 0 ? g[i] : 0.0; break;
          case ElementwiseOp::abs: ga[i] += detail::sign(av[i]) * g[i]; break;
          default: ga[i] += 2.0 * av[i] * g[i]; break;
        }
      }
    });
    return out;
  }

  const Tensor& rhs = *b;
  if (a.cols() != rhs.cols() ||
      (a.rows() != rhs.rows() && a.rows() != 1 && rhs.rows() != 1)) {
    throw DimensionError("elementwise shapes incompatible: " + a.shape() + " vs " + rhs.shape());
  }
  const std::size_t rows = std::max(a.rows(), rhs.rows());
  const std::size_t cols = a.cols();
  const bool a_bc = a.rows() != rows;
  const bool b_bc = rhs.rows() != rows;
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double x = a(a_bc ? 0 : i, j);
      const double y = rhs(b_bc ? 0 : i, j);
      out(i, j) = op == ElementwiseOp::add ? x + y : (op == ElementwiseOp::sub ? x - y : x * y);
    }
  }
  tape.record(out, {a, rhs}, [a, rhs, out, op, rows, cols, a_bc, b_bc]() mutable {
    const auto g = out.grad();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double gij = g[i * cols + j];
        const std::size_t ai = (a_bc ? 0 : i) * cols + j;
        const std::size_t bi = (b_bc ? 0 : i) * cols + j;
        if (a.requires_grad()) {
          a.grad_buffer()[ai] += op == ElementwiseOp::mul ? gij * rhs.values()[bi] : gij;
        }
        if (rhs.requires_grad()) {
          double gb = gij;
          if (op == ElementwiseOp::sub) gb = -gij;
          if (op == ElementwiseOp::mul) gb = gij * a.values()[ai];
          rhs.grad_buffer()[bi] += gb;
        }
      }
    }
  });
  return out;
}

inline Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  return elementwise(t, ElementwiseOp::add, a, &b);
}
inline Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
  return elementwise(t, ElementwiseOp::sub, a, &b);
}
inline Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  return elementwise(t, ElementwiseOp::mul, a, &b);
}
inline Tensor relu(Tape& t, const Tensor& a) { return elementwise(t, ElementwiseOp::relu, a); }
inline Tensor abs(Tape& t, const Tensor& a) { return elementwise(t, ElementwiseOp::abs, a); }
inline Tensor square(Tape& t, const Tensor& a) { return elementwise(t, ElementwiseOp::square, a); }

inline Tensor scale(Tape& tape, const Tensor& a, double s) {
  Tensor out(a.rows(), a.cols());
  auto ov = out.values();
  const auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * s;
  tape.record(out, {a}, [a, out, s]() mutable {
    auto ga = a.grad_buffer();
    const auto g = out.grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
  });
  return out;
}

inline Tensor reduce(Tape& tape, ReduceOp op, const Tensor& a) {
  if (a.empty()) throw EmptyInputError("reduce over empty tensor " + a.shape());
  const auto av = a.values();
  if (op == ReduceOp::mean_axis0) {
    const std::size_t n = a.rows(), d = a.cols();
    Tensor out(1, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) out(0, j) += av[i * d + j];
    for (std::size_t j = 0; j < d; ++j) out(0, j) /= static_cast<double>(n);
    tape.record(out, {a}, [a, out, n, d]() mutable {
      auto ga = a.grad_buffer();
      const auto g = out.grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += g[j] / static_cast<double>(n);
    });
    return out;
  }
  double s = 0.0;
  for (double v : av) s += v;
  const double w = op == ReduceOp::mean_all ? 1.0 / static_cast<double>(av.size()) : 1.0;
  Tensor out = Tensor::scalar(s * w);
  tape.record(out, {a}, [a, out, w]() mutable {
    auto ga = a.grad_buffer();
    const double g = out.grad()[0] * w;
    for (double& x : ga) x += g;
  });
  return out;
}

inline Tensor mean_all(Tape& t, const Tensor& a) { return reduce(t, ReduceOp::mean_all, a); }
inline Tensor sum_all(Tape& t, const Tensor& a) { return reduce(t, ReduceOp::sum_all, a); }
inline Tensor mean_axis0(Tape& t, const Tensor& a) { return reduce(t, ReduceOp::mean_axis0, a); }

/// Column-wise concatenation of tensors with equal row counts.
inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols of no tensors");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != n) {
      throw DimensionError("concat_cols row mismatch: " + parts.front().shape() + " vs " + p.shape());
    }
    total += p.cols();
  }
  Tensor out(n, total);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, offset + j) = p(i, j);
    offset += p.cols();
  }
  tape.record(out, parts, [parts, out, n, total]() mutable {
    const auto g = out.grad();
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      if (p.requires_grad()) {
        auto gp = p.grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < p.cols(); ++j) gp[i * p.cols() + j] += g[i * total + offset + j];
      }
      offset += p.cols();
    }
  });
  return out;
}

/// Columns [begin, begin + count).
inline Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) {
    throw DimensionError("slice_cols out of range for " + a.shape());
  }
  const std::size_t n = a.rows(), c = a.cols();
  Tensor out(n, count);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, begin + j);
  tape.record(out, {a}, [a, out, n, c, begin, count]() mutable {
    auto ga = a.grad_buffer();
    const auto g = out.grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * c + begin + j] += g[i * count + j];
  });
  return out;
}

/// Per-row standardization (x - mean) / (std + eps) with population std.
inline Tensor normalize_rows(Tape& tape, const Tensor& a, double eps = 1e-8) {
  if (a.cols() < 2) {
    throw DimensionError("normalize_rows needs at least 2 columns, got " + a.shape());
  }
  const std::size_t n = a.rows(), d = a.cols();
  const double inv_d = 1.0 / static_cast<double>(d);
  Tensor out(n, d);
  std::vector<double> mean(n), sd(n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += a(i, j);
    m *= inv_d;
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) v += (a(i, j) - m) * (a(i, j) - m);
    mean[i] = m;
    sd[i] = std::sqrt(v * inv_d);
    for (std::size_t j = 0; j < d; ++j) out(i, j) = (a(i, j) - m) / (sd[i] + eps);
  }
  tape.record(out, {a}, [a, out, n, d, inv_d, mean, sd, eps]() mutable {
    auto ga = a.grad_buffer();
    const auto g = out.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double s = sd[i] + eps;
      double gsum = 0.0, gdot = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        gsum += g[i * d + j];
        gdot += g[i * d + j] * (a(i, j) - mean[i]);
      }
      // d sd / dx_k = (x_k - mean) / (d * sd); taken as 0 for a constant row.
      const double coef = sd[i] > 0 ? gdot * inv_d / (sd[i] * s * s) : 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        ga[i * d + j] += (g[i * d + j] - gsum * inv_d) / s - (a(i, j) - mean[i]) * coef;
      }
    }
  });
  return out;
}

/// sqrt(sum of squares); the subgradient at the zero matrix is zero.
inline Tensor frobenius_norm(Tape& tape, const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  const double norm = std::sqrt(s);
  Tensor out = Tensor::scalar(norm);
  tape.record(out, {a}, [a, out, norm]() mutable {
    if (norm == 0.0) return;
    auto ga = a.grad_buffer();
    const auto av = a.values();
    const double g = out.grad()[0] / norm;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * av[i];
  });
  return out;
}

inline Tensor log_softmax_rows(Tape& tape, const Tensor& a) {
  const std::size_t n = a.rows(), c = a.cols();
  Tensor out(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = a(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, a(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(a(i, j) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = a(i, j) - lse;
  }
  tape.record(out, {a}, [a, out, n, c]() mutable {
    auto ga = a.grad_buffer();
    const auto g = out.grad();
    const auto ov = out.values();
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        ga[i * c + j] += g[i * c + j] - std::exp(ov[i * c + j]) * gs;
    }
  });
  return out;
}

inline Tensor softmax_rows(Tape& tape, const Tensor& a) {
  const std::size_t n = a.rows(), c = a.cols();
  Tensor out(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = a(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, a(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (out(i, j) = std::exp(a(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= s;
  }
  tape.record(out, {a}, [a, out, n, c]() mutable {
    auto ga = a.grad_buffer();
    const auto g = out.grad();
    const auto p = out.values();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * p[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += p[i * c + j] * (g[i * c + j] - dot);
    }
  });
  return out;
}

/// max(a, lo); gradient passes only where a > lo.
inline Tensor clamp_min(Tape& tape, const Tensor& a, double lo) {
  Tensor out(a.rows(), a.cols());
  auto ov = out.values();
  const auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::max(av[i], lo);
  tape.record(out, {a}, [a, out, lo]() mutable {
    auto ga = a.grad_buffer();
    const auto g = out.grad();
    const auto av = a.values();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (av[i] > lo) ga[i] += g[i];
  });
  return out;
}

inline Tensor log(Tape& tape, const Tensor& a) {
  Tensor out(a.rows(), a.cols());
  auto ov = out.values();
  const auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > 0)) throw DataError("log of non-positive value");
    ov[i] = std::log(av[i]);
  }
  tape.record(out, {a}, [a, out]() mutable {
    auto ga = a.grad_buffer();
    const auto g = out.grad();
    const auto av = a.values();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / av[i];
  });
  return out;
}

/// Gathers a(i, index[i]) into an Nx1 column.
inline Tensor pick(Tape& tape, const Tensor& a, std::span<const std::size_t> index) {
  if (index.size() != a.rows()) {
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " + a.shape());
  }
  const std::size_t n = a.rows(), c = a.cols();
  Tensor out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] >= c) {
      throw DataError("class id " + std::to_string(index[i]) + " out of range for " +
                      std::to_string(c) + " classes");
    }
    out(i, 0) = a(i, index[i]);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  tape.record(out, {a}, [a, out, idx, c]() mutable {
    auto ga = a.grad_buffer();
    const auto g = out.grad();
    for (std::size_t i = 0; i < idx.size(); ++i) ga[i * c + idx[i]] += g[i];
  });
  return out;
}

}  // namespace cmir
