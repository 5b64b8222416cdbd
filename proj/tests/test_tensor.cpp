#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "seqmt/tensor.hpp"

using namespace seqmt;
using testing::fill_uniform;

namespace {

Matrix<double> naive_product(const Matrix<double>& a, bool ta, const Matrix<double>& b, bool tb) {
  const Matrix<double> x = ta ? Matrix<double>(a.transpose()) : a;
  const Matrix<double> y = tb ? Matrix<double>(b.transpose()) : b;
  Matrix<double> out = Matrix<double>::Zero(x.rows(), y.cols());
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < y.cols(); ++j)
      for (Index k = 0; k < x.cols(); ++k) out(i, j) += x(i, k) * y(k, j);
  return out;
}

}  // namespace

TEST_CASE("gemm with identity operand reproduces the other operand") {
  Matrix<float> a(2, 2);
  a << 1, 2, 3, 4;
  Matrix<float> c(2, 2);
  gemm<float>(a, false, Matrix<float>::Identity(2, 2), false, 1.0f, 0.0f, c);
  CHECK(c == a);
  gemm<float>(Matrix<float>::Identity(2, 2), false, a, false, 1.0f, 0.0f, c);
  CHECK(c == a);
}

TEST_CASE("gemm hand product and accumulation") {
  Matrix<double> a(1, 2);
  a << 2, 5;
  Matrix<double> b(2, 1);
  b << 1, 1;
  Matrix<double> c(1, 1);
  c(0, 0) = std::nan("");  // ignored when beta is zero
  gemm<double>(a, false, b, false, 1.0, 0.0, c);
  CHECK(c(0, 0) == 7.0);
  c(0, 0) = 1.0;
  gemm<double>(a, false, b, false, 1.0, 1.0, c);
  CHECK(c(0, 0) == 8.0);
}

TEST_CASE("gemm matches a naive triple loop for every transpose combination") {
  Rng rng(11);
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      const Index m = 5, k = 7, n = 9;
      Matrix<double> a(ta ? k : m, ta ? m : k);
      Matrix<double> b(tb ? n : k, tb ? k : n);
      fill_uniform(a, rng, 2.0);
      fill_uniform(b, rng, 2.0);
      Matrix<double> c(m, n);
      fill_uniform(c, rng);
      const Matrix<double> expected = 0.5 * naive_product(a, ta, b, tb) - 2.0 * c;
      gemm<double>(a, ta, b, tb, 0.5, -2.0, c);
      CHECK((c - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("gemm columns do not depend on the batch they are computed in") {
  Rng rng(5);
  Matrix<float> w(13, 37);
  Matrix<float> x(13, 11);
  fill_uniform(w, rng);
  fill_uniform(x, rng);
  const Matrix<float> all = matmul<float>(w, true, x, false);
  for (Index j = 0; j < x.cols(); ++j) {
    const Matrix<float> one = matmul<float>(w, true, x.col(j), false);
    CHECK(one.col(0) == all.col(j));
  }
}

TEST_CASE("gemm shape errors name both operands") {
  Matrix<float> a(2, 3), b(4, 2), c(2, 2);
  try {
    gemm<float>(a, false, b, false, 1.0f, 0.0f, c);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x2") != std::string::npos);
  }
  CHECK_THROWS_AS(gemm<float>(a, true, Matrix<float>(2, 2), false, 1.0f, 0.0f, c), ShapeError);
}

TEST_CASE("softmax examples") {
  Matrix<double> x(3, 2);
  x << 0, 1, 0, 2, 0, 3;
  const Matrix<double> y = softmax_columns(x);
  for (int i = 0; i < 3; ++i) CHECK(y(i, 0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  // e^x / sum e^x evaluated directly
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(std::abs(y(0, 1) - std::exp(1.0) / z) < 1e-12);
  CHECK(std::abs(y(0, 1) - 0.09003) < 1e-5);
  CHECK(std::abs(y(1, 1) - 0.24473) < 1e-5);
  CHECK(std::abs(y(2, 1) - 0.66524) < 1e-5);
}

TEST_CASE("softmax columns sum to one and ignore constant shifts") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix<float> x(7, 5);
    fill_uniform(x, rng, 10.0);
    const Matrix<float> y = softmax_columns(x);
    for (Index j = 0; j < y.cols(); ++j) CHECK(std::abs(y.col(j).sum() - 1.0f) < 1e-6f);
    const double shift = rng.uniform(-50, 50);
    Matrix<double> xd = x.cast<double>();
    const Matrix<double> a = softmax_columns(xd);
    const Matrix<double> b = softmax_columns<double>((xd.array() + shift).matrix());
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("softmax rejects non-finite input") {
  Matrix<float> x = Matrix<float>::Zero(2, 2);
  x(1, 1) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(softmax_columns(x), NumericError);
  x(1, 1) = std::nanf("");
  CHECK_THROWS_AS(softmax_columns(x), NumericError);
}

TEST_CASE("masked softmax zeroes masked entries and rejects empty columns") {
  Matrix<double> x(3, 2);
  x << 1, 4, 2, 5, 3, 6;
  MaskMatrix mask = MaskMatrix::Ones(3, 2);
  mask(2, 0) = 0;
  const Matrix<double> y = softmax_columns(x, mask);
  CHECK(y(2, 0) == 0.0);
  const double z = std::exp(1.0) + std::exp(2.0);
  CHECK(y(0, 0) == doctest::Approx(std::exp(1.0) / z));
  CHECK(y.col(1).sum() == doctest::Approx(1.0));
  mask.col(1).setZero();
  CHECK_THROWS_AS(softmax_columns(x, mask), MaskError);
}

TEST_CASE("log softmax agrees with log of softmax") {
  Rng rng(8);
  Matrix<double> x(6, 4);
  fill_uniform(x, rng, 5.0);
  const Matrix<double> a = log_softmax_columns(x);
  const Matrix<double> b = softmax_columns(x).array().log().matrix();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pointwise values and derivative of tanh") {
  Matrix<double> zero = Matrix<double>::Zero(1, 1);
  CHECK(seqmt::tanh(zero)(0, 0) == 0.0);
  CHECK(sigmoid(zero)(0, 0) == 0.5);
  const double h = 1e-4;
  Matrix<double> p(1, 1), m(1, 1);
  p(0, 0) = 0.5 + h;
  m(0, 0) = 0.5 - h;
  const double fd = (seqmt::tanh(p)(0, 0) - seqmt::tanh(m)(0, 0)) / (2 * h);
  const double t = std::tanh(0.5);
  CHECK(std::abs(fd - (1 - t * t)) < 1e-6);
}

TEST_CASE("gather rows") {
  Matrix<float> table(4, 3);
  table << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  const std::vector<std::int32_t> first{0};
  const Matrix<float> y = gather_rows<float>(table, first);
  CHECK(y.rows() == 3);
  CHECK(y.cols() == 1);
  CHECK(y.col(0) == table.row(0).transpose());

  const Matrix<float> empty = gather_rows<float>(table, std::span<const std::int32_t>{});
  CHECK(empty.cols() == 0);

  const std::vector<std::int32_t> bad{5};
  try {
    gather_rows<float>(table, bad);
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    CHECK(std::string(e.what()).find('5') != std::string::npos);
  }
}

TEST_CASE("scatter accumulates repeated ids and conserves gradient mass") {
  Matrix<double> grad_table = Matrix<double>::Zero(4, 2);
  const std::vector<std::int32_t> ids{2, 2};
  Matrix<double> g(2, 2);
  g << 1, 10, 2, 20;
  scatter_rows_add<double>(grad_table, ids, g);
  CHECK(grad_table(2, 0) == 11.0);
  CHECK(grad_table(2, 1) == 22.0);
  CHECK(grad_table.row(0).isZero());

  Rng rng(1);
  Matrix<double> big = Matrix<double>::Zero(9, 3);
  std::vector<std::int32_t> many;
  for (int k = 0; k < 40; ++k) many.push_back(static_cast<std::int32_t>(rng.below(9)));
  Matrix<double> gg(3, 40);
  fill_uniform(gg, rng);
  scatter_rows_add<double>(big, many, gg);
  CHECK(std::abs(big.sum() - gg.sum()) < 1e-12);
}

TEST_CASE("row sums accumulate across columns") {
  Matrix<float> x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  const Vector<float> s = row_sums(x);
  CHECK(s(0) == 6.0f);
  CHECK(s(1) == 15.0f);
}
