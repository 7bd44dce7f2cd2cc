#include "doctest.h"

#include "slp/autodiff.h"
#include "slp/errors.h"

#include <cmath>
#include <limits>
#include <random>

using namespace slp;
using namespace slp::ad;

namespace {

Tensor randomTensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (double& v : t.values()) {
    v = u(rng);
  }
  return t;
}

// Reduces any output to a scalar with fixed random weights so every output
// entry contributes to the checked gradient.
Var weightedSum(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tape& tape = y.tape();
  return sum(mul(y, tape.constant(randomTensor(y.value().rows(), y.value().cols(), rng))));
}

// Checks d(weightedSum(f(x)))/dx against central differences.
double check(const std::function<Var(Var)>& f, const Tensor& x0) {
  Tape tape;
  const Var x = tape.variable(x0);
  tape.backward(weightedSum(f(x), 99));
  const Tensor analytic = x.grad();
  const Tensor numeric = numericGradient(
      [&](const Tensor& p) {
        Tape t;
        return weightedSum(f(t.constant(p)), 99).value().item();
      },
      x0,
      1e-5);
  return maxRelativeError(analytic, numeric);
}

} // namespace

TEST_CASE("matmul with identity") {
  std::mt19937_64 rng(1);
  Tape tape;
  Tensor eye(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    eye(i, i) = 1.0;
  }
  const Tensor a = randomTensor(3, 4, rng);
  CHECK(matmul(tape.constant(eye), tape.constant(a)).value() == a);
}

TEST_CASE("softmax of a constant row is uniform") {
  Tape tape;
  const Var s = softmaxRows(tape.constant(Tensor(2, 5, 3.7)));
  for (double v : s.value().values()) {
    CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  }
}

TEST_CASE("masked softmax ignores -inf entries") {
  Tape tape;
  Tensor mask(1, 3);
  mask(0, 2) = -std::numeric_limits<double>::infinity();
  const Var s = softmaxRows(tape.constant(Tensor(1, 3, {1.0, 1.0, 50.0})), mask);
  CHECK(s.value()(0, 0) == doctest::Approx(0.5));
  CHECK(s.value()(0, 2) == 0.0);
}

TEST_CASE("simple derivatives") {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(3.0));
  tape.backward(square(x));
  CHECK(x.grad().item() == 6.0);

  Tape t2;
  const Var v = t2.variable(Tensor(2, 4, 1.0));
  t2.backward(mean(v));
  for (double g : v.grad().values()) {
    CHECK(g == 0.125);
  }
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  const Var x = tape.variable(Tensor(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("non-finite values name the producing op") {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(-1.0));
  try {
    log(x);
    FAIL("no error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("shape mismatch is rejected") {
  Tape tape;
  const Var a = tape.variable(Tensor(2, 3));
  const Var b = tape.variable(Tensor(3, 2));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("primitive gradients match central differences") {
  std::mt19937_64 rng(7);
  const Tensor x = randomTensor(3, 4, rng);
  const Tensor pos = randomTensor(3, 4, rng, 0.5, 2.0);
  const Tensor other = randomTensor(3, 4, rng);
  const Tensor right = randomTensor(4, 2, rng);
  const Tensor row = randomTensor(1, 4, rng, 0.5, 1.5);

  const double tol = 1e-6;
  CHECK(check([&](Var v) { return add(v, v.tape().constant(other)); }, x) < tol);
  CHECK(check([&](Var v) { return add(v, v.tape().constant(row)); }, x) < tol);
  CHECK(check([&](Var v) { return add(v.tape().constant(other), v); }, x) < tol);
  CHECK(check([&](Var v) { return sub(v.tape().constant(other), v); }, x) < tol);
  CHECK(check([&](Var v) { return mul(v, v); }, x) < tol);
  CHECK(check([&](Var v) { return mul(v.tape().constant(x), sliceRows(v, 0, 1)); }, row) < tol);
  CHECK(check([&](Var v) { return div(v.tape().constant(other), v); }, pos) < tol);
  CHECK(check([&](Var v) { return div(v, v.tape().constant(pos)); }, x) < tol);
  CHECK(check([&](Var v) { return scale(addScalar(neg(v), 0.3), 2.5); }, x) < tol);
  CHECK(check([&](Var v) { return matmul(v, v.tape().constant(right)); }, x) < tol);
  CHECK(check([&](Var v) { return matmul(v.tape().constant(x), v); }, right) < tol);
  CHECK(check([&](Var v) { return transpose(v); }, x) < tol);
  CHECK(check([&](Var v) { return reshape(v, 2, 6); }, x) < tol);
  CHECK(check([&](Var v) { return exp(v); }, x) < tol);
  CHECK(check([&](Var v) { return log(v); }, pos) < tol);
  CHECK(check([&](Var v) { return sqrt(v); }, pos) < tol);
  CHECK(check([&](Var v) { return square(v); }, x) < tol);
  CHECK(check([&](Var v) { return acosClamped(scale(v, 0.9), 1e-7); }, x) < tol);
  CHECK(check([&](Var v) { return gelu(v); }, x) < tol);
  CHECK(check([&](Var v) { return sum(v); }, x) < tol);
  CHECK(check([&](Var v) { return mean(v); }, x) < tol);
  CHECK(check([&](Var v) { return rowSum(v); }, x) < tol);
  CHECK(check([&](Var v) { return meanRows(v); }, x) < tol);
  CHECK(check([&](Var v) { return logSumExp(v); }, x) < tol);
  CHECK(check([&](Var v) { return softmaxRows(v); }, x) < tol);
  CHECK(check([&](Var v) { return normalizeRows(v); }, x) < tol);
  CHECK(check([&](Var v) { return sliceCols(v, 1, 2); }, x) < tol);
  CHECK(check([&](Var v) { return sliceRows(v, 1, 2); }, x) < tol);
  CHECK(check([&](Var v) {
          const Var parts[] = {v, exp(v)};
          return concatCols(parts);
        },
        x) < tol);
  CHECK(check([&](Var v) {
          const Var parts[] = {v, square(v)};
          return concatRows(parts);
        },
        x) < tol);
  CHECK(check([&](Var v) {
          const std::pair<std::size_t, std::size_t> at[] = {{0, 1}, {2, 3}, {0, 1}};
          return gather(v, at);
        },
        x) < tol);
  CHECK(check([&](Var v) { return cosineSimilarity(sliceRows(v, 0, 1), sliceRows(v, 1, 1)); }, x) < tol);
  CHECK(check([&](Var v) { return quatRowDot(v, v.tape().constant(other)); }, x) < tol);

  const Tensor gain = randomTensor(1, 4, rng, 0.5, 1.5);
  const Tensor bias = randomTensor(1, 4, rng);
  CHECK(check([&](Var v) { return layerNormRows(v, v.tape().constant(gain), v.tape().constant(bias)); }, x) < tol);
  CHECK(check([&](Var v) { return layerNormRows(v.tape().constant(x), v, v.tape().constant(bias)); }, gain) < tol);

  Tensor mask(3, 4);
  mask(0, 3) = -std::numeric_limits<double>::infinity();
  mask(1, 2) = -std::numeric_limits<double>::infinity();
  CHECK(check([&](Var v) { return softmaxRows(v, mask); }, x) < tol);
}

TEST_CASE("relu gradient away from the kink") {
  Tape tape;
  const Var x = tape.variable(Tensor(1, 3, {-1.0, 0.5, 2.0}));
  tape.backward(sum(relu(x)));
  CHECK(x.grad() == Tensor(1, 3, {0.0, 1.0, 1.0}));
}

TEST_CASE("clamped arccos uses the clamped derivative") {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(1.0));
  const Var y = acosClamped(x, 1e-7);
  CHECK(std::isfinite(y.value().item()));
  tape.backward(y);
  const double c = 1.0 - 1e-7;
  CHECK(x.grad().item() == doctest::Approx(-1.0 / std::sqrt(1.0 - c * c)));
}

TEST_CASE("composite expression gradient") {
  std::mt19937_64 rng(21);
  const Tensor w = randomTensor(4, 3, rng);
  const Tensor x0 = randomTensor(5, 4, rng);
  const double err = check(
      [&](Var x) {
        const Var h = gelu(matmul(x, x.tape().constant(w)));
        const Var a = softmaxRows(matmul(h, transpose(h)));
        return logSumExp(matmul(a, normalizeRows(h)));
      },
      x0);
  CHECK(err <= 1e-4);
}

TEST_CASE("gradients accumulate across uses and reset between sweeps") {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(2.0));
  const Var y = add(mul(x, x), x);
  tape.backward(y);
  CHECK(x.grad().item() == 5.0);
  tape.backward(y);
  CHECK(x.grad().item() == 5.0);
}

TEST_CASE("numeric gradient rejects a non-positive step") {
  const auto f = [](const Tensor& t) { return t[0]; };
  CHECK_THROWS_WITH_AS(numericGradient(f, Tensor::scalar(1.0), 0.0), "invalid step", std::invalid_argument);
  CHECK_THROWS_WITH_AS(numericGradient(f, Tensor::scalar(1.0), -1.0), "invalid step", std::invalid_argument);
}

TEST_CASE("relative error floor") {
  CHECK(maxRelativeError(Tensor::scalar(0.0), Tensor::scalar(1e-9)) == doctest::Approx(1e-3));
  CHECK(maxRelativeError(Tensor::scalar(2.0), Tensor::scalar(1.0)) == doctest::Approx(0.5));
}
