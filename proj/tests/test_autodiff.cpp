#include <doctest.h>

#include <cmath>
#include <cstring>

#include "msiprior/autodiff.hpp"
#include "msiprior/error.hpp"
#include "support.hpp"

using namespace msiprior;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using msiprior::testing::random_matrix;

namespace {

// Scalar loss that touches every entry of x with distinct weights, so that
// gradient errors in any coordinate show up.
Var probe_loss(Tape& t, Var x, CounterRng rng) {
  const Matrix w = random_matrix(x.rows(), x.cols(), rng);
  return ad::sum(ad::mul(x, t.constant(w)));
}

double check_unary(Var (*op)(Var), Matrix x0, std::uint64_t seed) {
  const ad::LossFn fn = [&](Tape& t, const std::vector<Var>& p) {
    return probe_loss(t, op(p[0]), CounterRng(seed));
  };
  return ad::grad_check(fn, {x0}, 1e-6);
}

}  // namespace

TEST_SUITE("tensor_autodiff") {

TEST_CASE("primitive forward values") {
  Tape t;
  const Var z = t.constant(Matrix::Zero(1, 2));
  CHECK(ad::softmax_rows(z).value() == Matrix::Constant(1, 2, 0.5));
  CHECK(ad::sigmoid(t.constant(Matrix::Zero(1, 1))).scalar() == 0.5);
  CounterRng rng(1);
  const Matrix a = random_matrix(2, 5, rng);
  CHECK(ad::matmul(t.constant(Matrix::Identity(2, 2)), t.constant(a)).value() == a);
  CHECK_THROWS_AS(ad::matmul(t.constant(a), t.constant(a)), Error);
  CHECK_THROWS_AS(ad::add(t.constant(a), t.constant(Matrix::Zero(3, 5))), Error);
}

TEST_CASE("softmax and layernorm row invariants") {
  Tape t;
  CounterRng rng(2);
  const Matrix x = 10.0 * random_matrix(20, 7, rng);
  const Matrix s = ad::softmax_rows(t.constant(x)).value();
  for (Eigen::Index i = 0; i < s.rows(); ++i) CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-12);
  CHECK((s.array() >= 0.0).all());
  const Matrix big = Matrix::Constant(1, 3, 1000.0);
  CHECK(ad::softmax_rows(t.constant(big)).value().allFinite());

  const Matrix l = ad::layernorm_rows(t.constant(x), 0.0).value();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    CHECK(std::abs(l.row(i).mean()) < 1e-9);
    CHECK(std::abs(l.row(i).squaredNorm() / 7.0 - 1.0) < 1e-9);
  }
}

TEST_CASE("backward closed forms") {
  SUBCASE("sum of squares") {
    Tape t;
    Matrix w0(1, 2);
    w0 << 1, 2;
    const Var w = t.variable(w0);
    t.backward(ad::sum(ad::mul(w, w)));
    CHECK(w.grad()(0, 0) == 2.0);
    CHECK(w.grad()(0, 1) == 4.0);
  }
  SUBCASE("sigmoid at zero") {
    Tape t;
    Matrix x0(3, 1);
    x0 << 1.5, -2.0, 0.25;
    const Var w = t.variable(Matrix::Zero(1, 3));
    const Var x = t.constant(x0);
    t.backward(ad::sigmoid(ad::matmul(w, x)));
    CHECK(w.grad().transpose().isApprox(0.25 * x0, 1e-15));
  }
  SUBCASE("unreached variables get exact zeros") {
    Tape t;
    const Var a = t.variable(Matrix::Ones(2, 2));
    const Var b = t.variable(Matrix::Ones(3, 1));
    t.backward(ad::sum(a));
    CHECK(b.grad() == Matrix::Zero(3, 1));
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape t;
    const Var a = t.variable(Matrix::Ones(2, 2));
    CHECK_THROWS_AS(t.backward(a), Error);
  }
}

TEST_CASE("grad_check on a quadratic is exact to rounding") {
  CounterRng rng(3);
  const Matrix a = random_matrix(4, 4, rng);
  const ad::LossFn fn = [&](Tape& t, const std::vector<Var>& p) {
    const Var y = ad::matmul(t.constant(a), p[0]);
    return ad::sum(ad::mul(y, y));
  };
  CHECK(ad::grad_check(fn, {random_matrix(4, 3, rng)}, 1e-5) < 1e-9);
}

TEST_CASE("grad_check reports non-finite losses") {
  const ad::LossFn fn = [](Tape&, const std::vector<Var>& p) { return ad::sum(ad::log(p[0])); };
  CHECK_THROWS_AS(ad::grad_check(fn, {Matrix::Zero(1, 1)}, 1e-5), Error);
}

TEST_CASE("elementwise primitive gradients") {
  CounterRng rng(4);
  // Keep relu inputs away from the kink and log inputs positive.
  Matrix x = random_matrix(3, 4, rng);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (std::abs(x(i)) < 0.1) x(i) += 0.3;
  CHECK(check_unary(&ad::tanh, x, 10) < 1e-7);
  CHECK(check_unary(&ad::relu, x, 11) < 1e-7);
  CHECK(check_unary(&ad::sigmoid, x, 12) < 1e-7);
  CHECK(check_unary(&ad::softplus, x, 13) < 1e-7);
  CHECK(check_unary(&ad::log, x.cwiseAbs(), 14) < 1e-7);
  CHECK(check_unary(&ad::transpose, x, 15) < 1e-7);
  CHECK(check_unary(&ad::softmax_rows, x, 16) < 1e-7);
  CHECK(check_unary(&ad::mean_rows, x, 17) < 1e-7);
  CHECK(check_unary([](Var v) { return ad::layernorm_rows(v); }, x, 18) < 1e-6);
  CHECK(check_unary([](Var v) { return ad::scale(v, -2.5); }, x, 19) < 1e-7);
}

TEST_CASE("structural primitive gradients") {
  CounterRng rng(5);
  const std::vector<Matrix> p0 = {random_matrix(4, 3, rng), random_matrix(3, 5, rng),
                                  random_matrix(1, 3, rng), random_matrix(4, 3, rng)};
  const ad::LossFn fn = [](Tape& t, const std::vector<Var>& p) {
    const Var ab = ad::matmul(p[0], p[1]);                         // 4x5
    const Var nt = ad::matmul_nt(p[0], p[3]);                      // 4x4
    const Var bc = ad::mul(ad::add(p[0], p[2]), ad::sub(p[3], p[2]));  // row broadcast
    const Var cat = ad::concat_cols({ab, nt, bc});                 // 4x12
    const Var rows = ad::concat_rows(ad::slice_rows(cat, 1, 2), ad::gather_rows(cat, {3, 0, 3}));
    const Var cols = ad::slice_cols(rows, 2, 7);
    return probe_loss(t, ad::tanh(cols), CounterRng(99));
  };
  CHECK(ad::grad_check(fn, p0, 1e-6) < 1e-7);
}

TEST_CASE("multi-head attention") {
  CounterRng rng(6);
  const Matrix q0 = random_matrix(3, 6, rng);
  const Matrix k0 = random_matrix(5, 6, rng);
  const Matrix v0 = random_matrix(5, 6, rng);

  SUBCASE("matches per-head composition of primitives") {
    Tape t;
    const Var q = t.constant(q0), k = t.constant(k0), v = t.constant(v0);
    const ad::AttentionResult fused = ad::multihead_attention(q, k, v, 2);
    Matrix mean = Matrix::Zero(3, 5);
    std::vector<Var> heads;
    for (int h = 0; h < 2; ++h) {
      const Var p = ad::softmax_rows(ad::scale(
          ad::matmul_nt(ad::slice_cols(q, 3 * h, 3), ad::slice_cols(k, 3 * h, 3)), 1.0 / std::sqrt(3.0)));
      mean += p.value() / 2.0;
      heads.push_back(ad::matmul(p, ad::slice_cols(v, 3 * h, 3)));
    }
    CHECK(msiprior::testing::max_abs_diff(fused.output.value(), ad::concat_cols(heads).value()) < 1e-14);
    CHECK(msiprior::testing::max_abs_diff(fused.mean_probs, mean) < 1e-15);
  }
  SUBCASE("gradients") {
    const ad::LossFn fn = [](Tape& t, const std::vector<Var>& p) {
      return probe_loss(t, ad::multihead_attention(p[0], p[1], p[2], 3).output, CounterRng(7));
    };
    CHECK(ad::grad_check(fn, {q0, k0, v0}, 1e-6) < 1e-7);
  }
  SUBCASE("head count must divide the width") {
    Tape t;
    CHECK_THROWS_AS(ad::multihead_attention(t.constant(q0), t.constant(k0), t.constant(v0), 4), Error);
  }
}

TEST_CASE("forward is deterministic") {
  CounterRng rng(8);
  const Matrix x = random_matrix(6, 6, rng);
  auto run = [&] {
    Tape t;
    const Var v = t.constant(x);
    return ad::layernorm_rows(ad::softmax_rows(ad::matmul_nt(v, v))).value();
  };
  const Matrix a = run(), b = run();
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}

}  // TEST_SUITE
