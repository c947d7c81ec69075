#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cmir/errors.hpp"

namespace cmir {

/// Dense row-major matrix of doubles with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage. Use clone() for a deep copy.
/// Rank is fixed at two; vectors are 1xD rows and scalars are 1x1.
class Tensor {
 public:
  Tensor() : Tensor(0, 0) {}

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : impl_(std::make_shared<Impl>()) {
    impl_->rows = rows;
    impl_->cols = cols;
    impl_->data.assign(rows * cols, fill);
  }

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
      : impl_(std::make_shared<Impl>()) {
    if (values.size() != rows * cols) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(rows, cols));
    }
    impl_->rows = rows;
    impl_->cols = cols;
    impl_->data = std::move(values);
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged rows in tensor literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(values));
  }

  static Tensor row(std::initializer_list<double> values) {
    return Tensor(1, values.size(), std::vector<double>(values));
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return impl_->rows; }
  std::size_t cols() const { return impl_->cols; }
  std::size_t size() const { return impl_->data.size(); }
  bool empty() const { return impl_->data.empty(); }
  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }
  std::string shape() const { return shape_str(rows(), cols()); }

  std::span<double> values() { return impl_->data; }
  std::span<const double> values() const { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }

  double& operator()(std::size_t r, std::size_t c) { return impl_->data[r * impl_->cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return impl_->data[r * impl_->cols + c];
  }

  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape());
    return impl_->data[0];
  }

  void fill(double v) { std::fill(impl_->data.begin(), impl_->data.end(), v); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  /// True for tensors not produced by a recorded operation.
  bool is_leaf() const { return impl_->leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated as zeros on first use. Gradients belong to
  /// the shared storage, so this is available through const handles.
  std::span<double> grad_buffer() const {
    if (impl_->grad.empty()) impl_->grad.assign(size(), 0.0);
    return impl_->grad;
  }
  void zero_grad() const { impl_->grad.assign(size(), 0.0); }
  void clear_grad() { impl_->grad.clear(); }

  /// Deep copy of the values; the copy is a fresh leaf without gradient.
  Tensor clone() const { return Tensor(rows(), cols(), impl_->data); }

  bool same_as(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  friend class Tape;

  struct Impl {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
  };

  std::shared_ptr<Impl> impl_;
};

/// Records differentiable operations in execution order for reverse-mode
/// differentiation. A tape constructed with recording=false evaluates
/// operations without recording anything.
class Tape {
 public:
  using BackwardRule = std::function<void()>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return ops_.size(); }

  /// Registers `out` as produced from `inputs`. The rule reads out's gradient
  /// and accumulates into the inputs that require it. No-op when not
  /// recording or when no input requires a gradient.
  void record(Tensor& out, std::vector<Tensor> inputs, BackwardRule rule) {
    if (!recording_) return;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return;
    out.impl_->requires_grad = true;
    out.impl_->leaf = false;
    ops_.push_back(Op{std::move(inputs), out, std::move(rule)});
  }

  /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls;
  /// intermediate gradients are reset at the start of every sweep. Leaves
  /// that appear on the tape but are unreachable from the loss end up with a
  /// zero gradient.
  void backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ContractError("backward requires a scalar loss, got " + loss.shape());
    }
    auto produced = std::find_if(ops_.begin(), ops_.end(),
                                 [&](const Op& op) { return op.output.same_as(loss); });
    if (produced == ops_.end()) {
      throw ContractError("loss was not produced by this tape");
    }
    for (Op& op : ops_) op.output.zero_grad();
    for (Op& op : ops_) {
      for (Tensor& in : op.inputs) {
        if (in.is_leaf() && in.requires_grad()) in.grad_buffer();
      }
    }

    Tensor seed = loss;
    seed.grad_buffer()[0] = 1.0;

    std::unordered_set<const Tensor::Impl*> live{loss.impl_.get()};
    auto is_live = [&](const Tensor& t) { return live.contains(t.impl_.get()); };
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (!is_live(it->output)) continue;
      it->rule();
      for (const Tensor& in : it->inputs) {
        if (in.requires_grad()) live.insert(in.impl_.get());
      }
    }
  }

 private:
  struct Op {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardRule rule;
  };

  bool recording_;
  std::vector<Op> ops_;
};

}  // namespace cmir
