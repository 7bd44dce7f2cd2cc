#include "slp/autodiff.h"

#include "slp/errors.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace slp::ad {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument(
        fmt::format("tensor {}x{} given {} values", rows, cols, data_.size()));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::invalid_argument(fmt::format("item() on a {}x{} tensor", rows_, cols_));
  }
  return data_[0];
}

const Tensor& Var::value() const {
  return tape_->value(index_);
}

const Tensor& Var::grad() const {
  return tape_->grad(index_);
}

bool Var::requiresGrad() const {
  return tape_->requiresGrad(index_);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back({"variable", std::move(value), {}, true, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back({"constant", std::move(value), {}, false, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  for (double v : value.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(fmt::format("non-finite value produced by '{}'", op));
    }
  }
  bool needsGrad = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) {
      throw std::invalid_argument(fmt::format("'{}' mixes vars from different tapes", op));
    }
    needsGrad = needsGrad || nodes_[in.index_].requiresGrad;
  }
  nodes_.push_back(
      {std::move(op), std::move(value), {}, needsGrad, needsGrad ? std::move(backward) : nullptr});
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t index) const {
  const Node& n = nodes_[index];
  if (n.grad.size() != n.value.size()) {
    return emptyGrad_;
  }
  return n.grad;
}

Tensor* Tape::gradSlot(std::size_t index) {
  Node& n = nodes_[index];
  if (!n.requiresGrad) {
    return nullptr;
  }
  if (n.grad.size() != n.value.size()) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) {
    throw std::invalid_argument("backward() on a var from another tape");
  }
  if (loss.value().size() != 1) {
    throw std::invalid_argument(fmt::format(
        "backward() needs a scalar loss, got {}x{}", loss.rows(), loss.cols()));
  }
  for (Node& n : nodes_) {
    n.grad = Tensor();
  }
  if (!nodes_[loss.index_].requiresGrad) {
    return;
  }
  gradSlot(loss.index_)->values()[0] = 1.0;
  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) {
      continue;
    }
    n.backward(n.grad, n.value);
  }
  // Keep a zero gradient on every leaf so callers can always read one.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requiresGrad) {
      gradSlot(i);
    }
  }
}

namespace {

enum class Broadcast { Same, Row, Scalar };

Broadcast broadcastKind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return Broadcast::Same;
  }
  if (b.rows() == 1 && b.cols() == a.cols()) {
    return Broadcast::Row;
  }
  if (b.rows() == 1 && b.cols() == 1) {
    return Broadcast::Scalar;
  }
  throw std::invalid_argument(fmt::format(
      "{}: shapes {}x{} and {}x{} are incompatible", op, a.rows(), a.cols(), b.rows(), b.cols()));
}

std::size_t bIndex(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::Same:
      return i;
    case Broadcast::Row:
      return i % cols;
    case Broadcast::Scalar:
      return 0;
  }
  return 0;
}

template <class Fwd, class DA, class DB>
Var binary(const char* name, Var a, Var b, Fwd fwd, DA da, DB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcastKind(av, bv, name);
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fwd(av[i], bv[bIndex(kind, i, av.cols())]);
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const std::size_t ib = b.index();
  const Var inputs[] = {a, b};
  return tape.record(
      name, std::move(out), inputs, [&tape, ia, ib, kind, da, db](const Tensor& g, const Tensor&) {
        const Tensor& av = tape.value(ia);
        const Tensor& bv = tape.value(ib);
        if (Tensor* ga = tape.gradSlot(ia)) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            (*ga)[i] += g[i] * da(av[i], bv[bIndex(kind, i, av.cols())]);
          }
        }
        if (Tensor* gb = tape.gradSlot(ib)) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t j = bIndex(kind, i, av.cols());
            (*gb)[j] += g[i] * db(av[i], bv[j]);
          }
        }
      });
}

// `df(x, y)` is the derivative given input x and output y.
template <class F, class DF>
Var unary(const char* name, Var a, F f, DF df) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(av[i]);
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record(name, std::move(out), inputs, [&tape, ia, df](const Tensor& g, const Tensor& y) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      const Tensor& av = tape.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*ga)[i] += g[i] * df(av[i], y[i]);
      }
    }
  });
}

void requireSameTape(Var a, Var b) {
  if (&a.tape() != &b.tape()) {
    throw std::invalid_argument("vars from different tapes");
  }
}

} // namespace

Var add(Var a, Var b) {
  requireSameTape(a, b);
  return binary(
      "add",
      a,
      b,
      [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  requireSameTape(a, b);
  return binary(
      "sub",
      a,
      b,
      [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  requireSameTape(a, b);
  return binary(
      "mul",
      a,
      b,
      [](double x, double y) { return x * y; },
      [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  requireSameTape(a, b);
  return binary(
      "div",
      a,
      b,
      [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(Var a, double s) {
  return unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var addScalar(Var a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) {
  return scale(a, -1.0);
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(
      "sqrt",
      a,
      [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var acosClamped(Var a, double eps) {
  const double lo = -1.0 + eps;
  const double hi = 1.0 - eps;
  return unary(
      "acos",
      a,
      [lo, hi](double x) { return std::acos(std::clamp(x, lo, hi)); },
      [lo, hi](double x, double) {
        const double c = std::clamp(x, lo, hi);
        return -1.0 / std::sqrt(1.0 - c * c);
      });
}

Var relu(Var a) {
  return unary(
      "relu",
      a,
      [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  static constexpr double kC = 0.7978845608028654; // sqrt(2 / pi)
  return unary(
      "gelu",
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = kC * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

namespace {

// out[0..m) += sum_p x[p] * b[p*m .. p*m+m), accumulated in p order.
__attribute__((target_clones("avx2", "default")))
void axpyRows(double* __restrict out, const double* __restrict x, const double* __restrict b, std::size_t k, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    const double xp = x[p];
    const double* __restrict br = b + p * m;
    for (std::size_t j = 0; j < m; ++j) {
      out[j] += xp * br[j];
    }
  }
}

// out (k x m) += a^T g for a (n x k), g (n x m), accumulated in i order.
__attribute__((target_clones("avx2", "default")))
void outerRows(double* __restrict out, const double* __restrict a, const double* __restrict g, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* __restrict gr = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = a[i * k + p];
      double* __restrict o = out + p * m;
      for (std::size_t j = 0; j < m; ++j) {
        o[j] += x * gr[j];
      }
    }
  }
}

} // namespace

Var matmul(Var a, Var b) {
  requireSameTape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument(fmt::format(
        "matmul: {}x{} times {}x{}", av.rows(), av.cols(), bv.rows(), bv.cols()));
  }
  const std::size_t n = av.rows();
  const std::size_t k = av.cols();
  const std::size_t m = bv.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    axpyRows(out.row(i).data(), av.row(i).data(), bv.row(0).data(), k, m);
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const std::size_t ib = b.index();
  const Var inputs[] = {a, b};
  return tape.record("matmul", std::move(out), inputs, [&tape, ia, ib, n, k, m](const Tensor& g, const Tensor&) {
    const Tensor& av = tape.value(ia);
    const Tensor& bv = tape.value(ib);
    if (Tensor* ga = tape.gradSlot(ia)) {
      // dA = G B^T
      std::vector<double> bt(m * k);
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < m; ++j) {
          bt[j * k + p] = bv(p, j);
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        axpyRows(ga->row(i).data(), g.row(i).data(), bt.data(), m, k);
      }
    }
    if (Tensor* gb = tape.gradSlot(ib)) {
      // dB = A^T G
      outerRows(gb->row(0).data(), av.row(0).data(), g.row(0).data(), n, k, m);
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.cols(), av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < av.cols(); ++c) {
      out(c, r) = av(r, c);
    }
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record("transpose", std::move(out), inputs, [&tape, ia](const Tensor& g, const Tensor&) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      for (std::size_t r = 0; r < ga->rows(); ++r) {
        for (std::size_t c = 0; c < ga->cols(); ++c) {
          (*ga)(r, c) += g(c, r);
        }
      }
    }
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& av = a.value();
  if (rows * cols != av.size()) {
    throw std::invalid_argument(
        fmt::format("reshape: {}x{} into {}x{}", av.rows(), av.cols(), rows, cols));
  }
  Tensor out(rows, cols, std::vector<double>(av.values().begin(), av.values().end()));
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record("reshape", std::move(out), inputs, [&tape, ia](const Tensor& g, const Tensor&) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*ga)[i] += g[i];
      }
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) {
    s += v;
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record("sum", Tensor::scalar(s), inputs, [&tape, ia](const Tensor& g, const Tensor&) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      for (double& v : ga->values()) {
        v += g[0];
      }
    }
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) {
    s += v;
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record("mean", Tensor::scalar(s / n), inputs, [&tape, ia, n](const Tensor& g, const Tensor&) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      for (double& v : ga->values()) {
        v += g[0] / n;
      }
    }
  });
}

Var rowSum(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row(r)) {
      s += v;
    }
    out[r] = s;
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record("row_sum", std::move(out), inputs, [&tape, ia](const Tensor& g, const Tensor&) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      for (std::size_t r = 0; r < ga->rows(); ++r) {
        for (double& v : ga->row(r)) {
          v += g[r];
        }
      }
    }
  });
}

Var meanRows(Var a) {
  const Tensor& av = a.value();
  const double n = static_cast<double>(av.rows());
  Tensor out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < av.cols(); ++c) {
      out[c] += av(r, c);
    }
  }
  for (double& v : out.values()) {
    v /= n;
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record("mean_rows", std::move(out), inputs, [&tape, ia, n](const Tensor& g, const Tensor&) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      for (std::size_t r = 0; r < ga->rows(); ++r) {
        for (std::size_t c = 0; c < ga->cols(); ++c) {
          (*ga)(r, c) += g[c] / n;
        }
      }
    }
  });
}

Var logSumExp(Var a) {
  const Tensor& av = a.value();
  if (av.size() == 0) {
    throw std::invalid_argument("logSumExp of an empty tensor");
  }
  const double m = *std::max_element(av.values().begin(), av.values().end());
  double s = 0.0;
  for (double v : av.values()) {
    s += std::exp(v - m);
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record(
      "logsumexp", Tensor::scalar(m + std::log(s)), inputs, [&tape, ia](const Tensor& g, const Tensor& y) {
        if (Tensor* ga = tape.gradSlot(ia)) {
          const Tensor& av = tape.value(ia);
          for (std::size_t i = 0; i < av.size(); ++i) {
            (*ga)[i] += g[0] * std::exp(av[i] - y[0]);
          }
        }
      });
}

namespace {

Var softmaxImpl(Var a, const Tensor* mask) {
  const Tensor& av = a.value();
  if (mask && (mask->rows() != av.rows() || mask->cols() != av.cols())) {
    throw std::invalid_argument("softmax mask shape mismatch");
  }
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  Tensor out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double m = kNegInf;
    for (std::size_t c = 0; c < av.cols(); ++c) {
      if (!mask || (*mask)(r, c) != kNegInf) {
        m = std::max(m, av(r, c));
      }
    }
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) {
      if (!mask || (*mask)(r, c) != kNegInf) {
        const double e = std::exp(av(r, c) - m);
        out(r, c) = e;
        s += e;
      }
    }
    for (double& v : out.row(r)) {
      v /= s;
    }
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record("softmax", std::move(out), inputs, [&tape, ia](const Tensor& g, const Tensor& y) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) {
          dot += g(r, c) * y(r, c);
        }
        for (std::size_t c = 0; c < y.cols(); ++c) {
          (*ga)(r, c) += y(r, c) * (g(r, c) - dot);
        }
      }
    }
  });
}

} // namespace

Var softmaxRows(Var a) {
  return softmaxImpl(a, nullptr);
}

Var softmaxRows(Var a, const Tensor& additiveMask) {
  return softmaxImpl(a, &additiveMask);
}

Var layerNormRows(Var a, Var gain, Var bias, double eps) {
  requireSameTape(a, gain);
  requireSameTape(a, bias);
  const Tensor& av = a.value();
  const std::size_t n = av.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw std::invalid_argument("layer norm gain/bias must be 1 x cols");
  }
  Tensor normalized(av.rows(), n);
  std::vector<double> invStd(av.rows());
  Tensor out(av.rows(), n);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double mu = 0.0;
    for (double v : av.row(r)) {
      mu += v;
    }
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : av.row(r)) {
      var += (v - mu) * (v - mu);
    }
    var /= static_cast<double>(n);
    invStd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      normalized(r, c) = (av(r, c) - mu) * invStd[r];
      out(r, c) = normalized(r, c) * gv[c] + bv[c];
    }
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const std::size_t ig = gain.index();
  const std::size_t ib = bias.index();
  const Var inputs[] = {a, gain, bias};
  return tape.record(
      "layer_norm",
      std::move(out),
      inputs,
      [&tape, ia, ig, ib, n, normalized = std::move(normalized), invStd = std::move(invStd)](
          const Tensor& g, const Tensor&) {
        const Tensor& gv = tape.value(ig);
        if (Tensor* gg = tape.gradSlot(ig)) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < n; ++c) {
              (*gg)[c] += g(r, c) * normalized(r, c);
            }
          }
        }
        if (Tensor* gb = tape.gradSlot(ib)) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < n; ++c) {
              (*gb)[c] += g(r, c);
            }
          }
        }
        if (Tensor* ga = tape.gradSlot(ia)) {
          const double dn = static_cast<double>(n);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            double meanDy = 0.0;
            double meanDyX = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double dy = g(r, c) * gv[c];
              meanDy += dy;
              meanDyX += dy * normalized(r, c);
            }
            meanDy /= dn;
            meanDyX /= dn;
            for (std::size_t c = 0; c < n; ++c) {
              const double dy = g(r, c) * gv[c];
              (*ga)(r, c) += invStd[r] * (dy - meanDy - normalized(r, c) * meanDyX);
            }
          }
        }
      });
}

Var normalizeRows(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  std::vector<double> norms(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row(r)) {
      s += v * v;
    }
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0)) {
      throw NumericError(fmt::format("normalize_rows: row {} has zero norm", r));
    }
    for (std::size_t c = 0; c < av.cols(); ++c) {
      out(r, c) = av(r, c) / norms[r];
    }
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record(
      "normalize_rows",
      std::move(out),
      inputs,
      [&tape, ia, norms = std::move(norms)](const Tensor& g, const Tensor& y) {
        if (Tensor* ga = tape.gradSlot(ia)) {
          for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) {
              dot += g(r, c) * y(r, c);
            }
            for (std::size_t c = 0; c < y.cols(); ++c) {
              (*ga)(r, c) += (g(r, c) - y(r, c) * dot) / norms[r];
            }
          }
        }
      });
}

Var concatCols(std::span<const Var> parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concatCols of nothing");
  }
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    requireSameTape(parts.front(), p);
    if (p.rows() != rows) {
      throw std::invalid_argument("concatCols: row counts differ");
    }
    offsets.push_back(cols);
    cols += p.cols();
  }
  Tensor out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + offsets[k]);
    }
  }
  Tape& tape = parts.front().tape();
  std::vector<std::size_t> indices;
  for (const Var& p : parts) {
    indices.push_back(p.index());
  }
  return tape.record(
      "concat_cols",
      std::move(out),
      parts,
      [&tape, indices = std::move(indices), offsets = std::move(offsets)](const Tensor& g, const Tensor&) {
        for (std::size_t k = 0; k < indices.size(); ++k) {
          if (Tensor* gp = tape.gradSlot(indices[k])) {
            for (std::size_t r = 0; r < gp->rows(); ++r) {
              for (std::size_t c = 0; c < gp->cols(); ++c) {
                (*gp)(r, c) += g(r, offsets[k] + c);
              }
            }
          }
        }
      });
}

Var concatRows(std::span<const Var> parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concatRows of nothing");
  }
  const std::size_t cols = parts.front().cols();
  std::vector<double> data;
  std::vector<std::size_t> offsets;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    requireSameTape(parts.front(), p);
    if (p.cols() != cols) {
      throw std::invalid_argument("concatRows: column counts differ");
    }
    offsets.push_back(rows);
    rows += p.rows();
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  Tape& tape = parts.front().tape();
  std::vector<std::size_t> indices;
  for (const Var& p : parts) {
    indices.push_back(p.index());
  }
  return tape.record(
      "concat_rows",
      Tensor(rows, cols, std::move(data)),
      parts,
      [&tape, indices = std::move(indices), offsets = std::move(offsets), cols](const Tensor& g, const Tensor&) {
        for (std::size_t k = 0; k < indices.size(); ++k) {
          if (Tensor* gp = tape.gradSlot(indices[k])) {
            const double* src = g.row(offsets[k]).data();
            for (std::size_t i = 0; i < gp->size(); ++i) {
              (*gp)[i] += src[i];
            }
          }
        }
        (void)cols;
      });
}

Var sliceCols(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (start + count > av.cols()) {
    throw std::invalid_argument(fmt::format(
        "sliceCols [{}, {}) out of {} columns", start, start + count, av.cols()));
  }
  Tensor out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) {
      out(r, c) = av(r, start + c);
    }
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record("slice_cols", std::move(out), inputs, [&tape, ia, start](const Tensor& g, const Tensor&) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) {
          (*ga)(r, start + c) += g(r, c);
        }
      }
    }
  });
}

Var sliceRows(Var a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  if (start + count > av.rows()) {
    throw std::invalid_argument(
        fmt::format("sliceRows [{}, {}) out of {} rows", start, start + count, av.rows()));
  }
  const auto first = av.values().begin() + static_cast<std::ptrdiff_t>(start * av.cols());
  Tensor out(count, av.cols(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * av.cols())));
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record("slice_rows", std::move(out), inputs, [&tape, ia, start](const Tensor& g, const Tensor&) {
    if (Tensor* ga = tape.gradSlot(ia)) {
      double* dst = &(*ga)(start, 0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        dst[i] += g[i];
      }
    }
  });
}

Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> at) {
  const Tensor& av = a.value();
  Tensor out(at.size(), 1);
  std::vector<std::size_t> flat;
  flat.reserve(at.size());
  for (std::size_t k = 0; k < at.size(); ++k) {
    const auto [r, c] = at[k];
    if (r >= av.rows() || c >= av.cols()) {
      throw std::invalid_argument(fmt::format("gather index ({}, {}) out of range", r, c));
    }
    flat.push_back(r * av.cols() + c);
    out[k] = av[flat.back()];
  }
  Tape& tape = a.tape();
  const std::size_t ia = a.index();
  const Var inputs[] = {a};
  return tape.record(
      "gather", std::move(out), inputs, [&tape, ia, flat = std::move(flat)](const Tensor& g, const Tensor&) {
        if (Tensor* ga = tape.gradSlot(ia)) {
          for (std::size_t k = 0; k < flat.size(); ++k) {
            (*ga)[flat[k]] += g[k];
          }
        }
      });
}

Var cosineSimilarity(Var x, Var y) {
  if (x.rows() != 1 || y.rows() != 1 || x.cols() != y.cols()) {
    throw std::invalid_argument("cosineSimilarity needs two 1 x n rows");
  }
  return sum(mul(normalizeRows(x), normalizeRows(y)));
}

Var quatRowDot(Var a, Var b) {
  if (a.cols() != 4 || b.cols() != 4) {
    throw std::invalid_argument("quatRowDot needs B x 4 inputs");
  }
  return rowSum(mul(a, b));
}

Tensor numericGradient(
    const std::function<double(const Tensor&)>& f,
    const Tensor& point,
    double step) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("invalid step");
  }
  Tensor grad(point.rows(), point.cols());
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x = point[i];
    probe[i] = x + step;
    const double fp = f(probe);
    probe[i] = x - step;
    const double fm = f(probe);
    probe[i] = x;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

double maxRelativeError(const Tensor& analytic, const Tensor& numeric, double floor) {
  if (analytic.size() != numeric.size()) {
    throw std::invalid_argument("maxRelativeError: size mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

} // namespace slp::ad
