#include <doctest.h>

#include <functional>

#include "bcr/autodiff.hpp"
#include "bcr/rng.hpp"

using namespace bcr;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Checks d f / d inputs[k] against central differences for every k.
void check_gradient(const std::vector<Matrix>& inputs, const std::function<Var(Tape&, std::vector<Var>&)>& f,
                    double h = 1e-6, double tol = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  const Var out = f(tape, vars);
  tape.backward(out);

  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& m : xs) vs.push_back(t.constant(m));
    return f(t, vs).scalar();
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix& g = vars[k].grad();
    REQUIRE(g.rows() == inputs[k].rows());
    REQUIRE(g.cols() == inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto up = inputs, down = inputs;
      up[k].data()[i] += h;
      down[k].data()[i] -= h;
      const double fd = (eval(up) - eval(down)) / (2 * h);
      CHECK(g.data()[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
    }
  }
}

}  // namespace

TEST_CASE("backward of a scalar seeds one") {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(1, 1, 3.0));
  const Var y = ad::square(x);
  tape.backward(y);
  CHECK(y.scalar() == 9.0);
  CHECK(x.grad()(0, 0) == 6.0);
}

TEST_CASE("backward requires a scalar output") {
  Tape tape;
  const Var x = tape.variable(Matrix::Ones(2, 2));
  CHECK_THROWS(tape.backward(x));
}

TEST_CASE("constants receive no gradient") {
  Tape tape;
  const Var c = tape.constant(Matrix::Ones(2, 2));
  const Var x = tape.variable(Matrix::Ones(2, 2));
  tape.backward(ad::sum(ad::mul(c, x)));
  CHECK_FALSE(tape.requires_grad(c));
  CHECK(x.grad().isApproxToConstant(1.0));
}

TEST_CASE("gradients accumulate over reuse") {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(1, 1, 2.0));
  tape.backward(ad::add(ad::mul(x, x), x));
  CHECK(x.grad()(0, 0) == 5.0);
}

TEST_CASE("repeated backward resets gradients") {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(1, 1, 2.0));
  const Var y = ad::scale(x, 3.0);
  tape.backward(y);
  tape.backward(y);
  CHECK(x.grad()(0, 0) == 3.0);
}

TEST_CASE("elementwise and arithmetic gradients") {
  Rng rng(3);
  const Matrix a = random_matrix(rng, 3, 4), b = random_matrix(rng, 3, 4);
  check_gradient({a, b}, [](Tape&, std::vector<Var>& v) { return ad::sum(ad::mul(v[0] - v[1], v[0] + v[1])); });
  check_gradient({a}, [](Tape&, std::vector<Var>& v) { return ad::sum(ad::scale(ad::add_scalar(v[0], 0.3), -2.5)); });
  check_gradient({a}, [](Tape&, std::vector<Var>& v) { return ad::sum(ad::gelu(v[0])); });
  check_gradient({random_matrix(rng, 3, 4, 0.2, 1.0)},
                 [](Tape&, std::vector<Var>& v) { return ad::sum(ad::sqrt(v[0])); });
  check_gradient({a}, [](Tape&, std::vector<Var>& v) { return ad::sum(ad::abs(v[0])); });
}

TEST_CASE("abs subgradient at zero is zero") {
  Tape tape;
  const Var x = tape.variable(Matrix::Zero(1, 3));
  tape.backward(ad::sum(ad::abs(x)));
  CHECK(x.grad().isZero());
}

TEST_CASE("matmul, transpose and broadcasting gradients") {
  Rng rng(4);
  const Matrix a = random_matrix(rng, 3, 5), b = random_matrix(rng, 5, 2), row = random_matrix(rng, 1, 5);
  check_gradient({a, b}, [](Tape&, std::vector<Var>& v) { return ad::sum(ad::square(ad::matmul(v[0], v[1]))); });
  check_gradient({a}, [](Tape&, std::vector<Var>& v) {
    return ad::sum(ad::square(ad::matmul(v[0], ad::transpose(v[0]))));
  });
  check_gradient({a, row}, [](Tape&, std::vector<Var>& v) { return ad::sum(ad::square(ad::add_row(v[0], v[1]))); });
  check_gradient({a, row}, [](Tape&, std::vector<Var>& v) { return ad::sum(ad::square(ad::sub_row(v[0], v[1]))); });
}

TEST_CASE("reductions and row transforms") {
  Rng rng(5);
  const Matrix a = random_matrix(rng, 4, 6);
  const Matrix w = random_matrix(rng, 4, 6);
  const Matrix gamma = random_matrix(rng, 1, 6, 0.5, 1.5), beta = random_matrix(rng, 1, 6);
  auto weighted = [w](Tape& t, Var x) { return ad::sum(ad::mul(x, t.constant(w))); };
  check_gradient({a}, [&](Tape& t, std::vector<Var>& v) {
    Var m = ad::col_mean(v[0]);
    return ad::sum(ad::mul(m, t.constant(w.row(0))));
  });
  check_gradient({a}, [&](Tape& t, std::vector<Var>& v) { return weighted(t, ad::softmax_rows(v[0])); });
  check_gradient({a, gamma, beta}, [&](Tape& t, std::vector<Var>& v) {
    return weighted(t, ad::layer_norm_rows(v[0], v[1], v[2]));
  });
  check_gradient({a}, [&](Tape& t, std::vector<Var>& v) { return weighted(t, ad::normalize_rows(v[0])); });
}

TEST_CASE("softmax rows are stochastic and shift invariant") {
  Rng rng(6);
  Tape tape;
  const Matrix a = random_matrix(rng, 5, 7, -50, 50);
  const Matrix s = ad::softmax_rows(tape.constant(a)).value();
  for (Eigen::Index i = 0; i < s.rows(); ++i) CHECK(s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.minCoeff() >= 0.0);
  const Matrix shifted = ad::softmax_rows(tape.constant(a.array() + 1000.0)).value();
  CHECK(shifted.isApprox(s, 1e-12));
}

TEST_CASE("structural ops route gradients") {
  Rng rng(7);
  const Matrix a = random_matrix(rng, 4, 3), b = random_matrix(rng, 4, 2), c = random_matrix(rng, 2, 3);
  check_gradient({a}, [](Tape&, std::vector<Var>& v) { return ad::sum(ad::square(ad::gather_rows(v[0], {3, 0, 3}))); });
  check_gradient({a}, [](Tape&, std::vector<Var>& v) {
    return ad::sum(ad::square(ad::gather_flat(v[0], {11, 0, 5, 5, 2, 7}, 2, 3)));
  });
  check_gradient({a}, [](Tape&, std::vector<Var>& v) { return ad::sum(ad::square(ad::col_block(v[0], 1, 2))); });
  check_gradient({a, b}, [](Tape&, std::vector<Var>& v) {
    return ad::sum(ad::square(ad::concat_cols({v[0], v[1]})));
  });
  check_gradient({a, c}, [](Tape&, std::vector<Var>& v) {
    return ad::sum(ad::square(ad::concat_rows({v[0], v[1]})));
  });
}

TEST_CASE("structural op values") {
  Tape tape;
  Matrix a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  const Var x = tape.constant(a);
  CHECK(ad::gather_rows(x, {1}).value() == a.row(1));
  CHECK(ad::col_block(x, 1, 1).value() == a.col(1));
  CHECK(ad::gather_flat(x, {5, 0}, 1, 2).value()(0, 0) == 6);
  const Matrix cat = ad::concat_cols({x, x}).value();
  CHECK(cat.cols() == 6);
  CHECK(cat(1, 4) == 5);
  CHECK(ad::concat_rows({x, x}).value()(3, 2) == 6);
}

TEST_CASE("shape mismatches throw") {
  Tape tape;
  const Var a = tape.variable(Matrix::Ones(2, 3));
  const Var b = tape.variable(Matrix::Ones(3, 2));
  CHECK_THROWS(ad::add(a, b));
  CHECK_THROWS(ad::matmul(a, a));
}
