#pragma once

// Reverse-mode differentiation over dense row-major rank-2 tensors of doubles.
//
// A Tape records every operation executed on its Vars in program order;
// Tape::backward walks that record once in reverse. Each primitive below
// registers its own backward rule. A Tape is not thread-safe; use one per
// thread.

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace slp::ad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v) {
    return {1, 1, v};
  }

  std::size_t rows() const {
    return rows_;
  }
  std::size_t cols() const {
    return cols_;
  }
  std::size_t size() const {
    return data_.size();
  }
  std::array<std::size_t, 2> shape() const {
    return {rows_, cols_};
  }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  double& operator[](std::size_t i) {
    return data_[i];
  }
  double operator[](std::size_t i) const {
    return data_[i];
  }
  // Value of a 1x1 tensor.
  double item() const;

  std::span<double> values() {
    return data_;
  }
  std::span<const double> values() const {
    return data_;
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Gradient after Tape::backward; zeros for nodes no gradient reached.
  const Tensor& grad() const;
  std::size_t rows() const {
    return value().rows();
  }
  std::size_t cols() const {
    return value().cols();
  }
  bool requiresGrad() const;

  Tape& tape() const {
    return *tape_;
  }
  std::size_t index() const {
    return index_;
  }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  // Receives the node's output gradient and value; accumulates into inputs
  // through gradSlot().
  using BackwardFn = std::function<void(const Tensor& gradOut, const Tensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is accumulated by backward().
  Var variable(Tensor value);
  Var constant(Tensor value);

  /// Records an operation. Throws NumericError naming `op` if the value
  /// contains NaN or Inf.
  Var record(std::string op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  /// Reverse sweep from a 1x1 loss. Gradients of earlier sweeps are cleared.
  void backward(Var loss);

  const Tensor& value(std::size_t index) const {
    return nodes_[index].value;
  }
  const Tensor& grad(std::size_t index) const;
  bool requiresGrad(std::size_t index) const {
    return nodes_[index].requiresGrad;
  }
  // Gradient accumulator for a node that requires grad; nullptr otherwise.
  Tensor* gradSlot(std::size_t index);

  std::size_t size() const {
    return nodes_.size();
  }
  const std::string& opName(std::size_t index) const {
    return nodes_[index].op;
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requiresGrad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  Tensor emptyGrad_;
};

// Shape rules: binary elementwise ops accept equal shapes, a 1 x cols row
// broadcast over rows, or a 1 x 1 scalar as the right operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var addScalar(Var a, double s);
Var neg(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);
// Same row-major data viewed as rows x cols.
Var reshape(Var a, std::size_t rows, std::size_t cols);

Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
// arccos(clamp(x, -1 + eps, 1 - eps)); the derivative is evaluated at the
// clamped input.
Var acosClamped(Var a, double eps);
Var relu(Var a);
// tanh-approximated GELU.
Var gelu(Var a);

Var sum(Var a);
Var mean(Var a);
// rows x 1 per-row sums.
Var rowSum(Var a);
// 1 x cols mean over rows.
Var meanRows(Var a);
// log(sum(exp(a))) over all elements, 1 x 1.
Var logSumExp(Var a);

// Row-wise; entries equal to -infinity in `mask` (same shape) are excluded.
Var softmaxRows(Var a);
Var softmaxRows(Var a, const Tensor& additiveMask);
// Row-wise normalization to zero mean / unit variance, then gain and bias
// (both 1 x cols).
Var layerNormRows(Var a, Var gain, Var bias, double eps = 1e-5);
// Each row scaled to unit Euclidean norm.
Var normalizeRows(Var a);

Var concatCols(std::span<const Var> parts);
Var concatRows(std::span<const Var> parts);
Var sliceCols(Var a, std::size_t start, std::size_t count);
Var sliceRows(Var a, std::size_t start, std::size_t count);
// k x 1 column of a(r, c) for every (r, c) in `at`.
Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> at);

// x . y / (|x| |y|) for two 1 x n rows.
Var cosineSimilarity(Var x, Var y);
// Per-row quaternion dot products of two B x 4 blocks, B x 1.
Var quatRowDot(Var a, Var b);

/// Central-difference gradient of `f` with respect to every entry of
/// `point`. Throws std::invalid_argument("invalid step") for step <= 0.
Tensor numericGradient(
    const std::function<double(const Tensor&)>& f,
    const Tensor& point,
    double step);

/// |a - n| / max(|a|, |n|, floor), maximized over entries.
double maxRelativeError(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6);

} // namespace slp::ad
