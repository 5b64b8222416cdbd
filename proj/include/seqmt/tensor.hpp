#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "seqmt/errors.hpp"

namespace seqmt {

using Index = Eigen::Index;

/// Column-major dense storage; one column per batch element.
template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Token ids laid out time x batch.
using IdMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;
/// 1 on real tokens, 0 on padding; time x batch.
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct Shape {
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::ostream& operator<<(std::ostream& os, const Shape& s);
std::string to_string(const Shape& s);

template <typename Derived>
Shape shape_of(const Eigen::DenseBase<Derived>& m) {
  return {m.rows(), m.cols()};
}

/// Values and accumulated gradients of one edge between layers.
template <typename S>
struct Variable {
  Matrix<S> data;
  Matrix<S> grad;

  Variable() = default;
  Variable(Index rows, Index cols) { resize(rows, cols); }

  /// Reshapes both buffers; grad comes back zeroed, data is unspecified.
  void resize(Index rows, Index cols) {
    data.resize(rows, cols);
    grad.setZero(rows, cols);
  }
  void zero_grad() { grad.setZero(data.rows(), data.cols()); }

  Index rows() const { return data.rows(); }
  Index cols() const { return data.cols(); }
  Shape shape() const { return {data.rows(), data.cols()}; }
};

/// c <- alpha * op(a) * op(b) + beta * c.
///
/// Every output element is accumulated over the inner dimension in
/// ascending order, independently of how many columns c has. A column
/// computed inside a batch is therefore bit-identical to the same column
/// computed alone, which the decoder relies on. When beta is zero the prior
/// contents of c are ignored (they may be uninitialized).
template <typename S>
void gemm(const Eigen::Ref<const Matrix<S>>& a, bool transpose_a,
          const Eigen::Ref<const Matrix<S>>& b, bool transpose_b, S alpha,
          S beta, Eigen::Ref<Matrix<S>> c);

/// Convenience: returns op(a) * op(b).
template <typename S>
Matrix<S> matmul(const Matrix<S>& a, bool transpose_a, const Matrix<S>& b,
                 bool transpose_b);

/// Column-wise softmax with max subtraction. Throws NumericError on
/// non-finite input.
template <typename S>
Matrix<S> softmax_columns(const Matrix<S>& x);

/// Softmax restricted to positions where mask is nonzero; masked entries
/// come out exactly 0. mask has the shape of x. A column without any
/// unmasked entry raises MaskError.
template <typename S>
Matrix<S> softmax_columns(const Matrix<S>& x, const MaskMatrix& mask);

/// log(softmax(x)) per column, computed as x - logsumexp(x).
template <typename S>
Matrix<S> log_softmax_columns(const Matrix<S>& x);

template <typename S>
Matrix<S> tanh(const Matrix<S>& x);
template <typename S>
Matrix<S> sigmoid(const Matrix<S>& x);

/// Sum over columns, accumulated left to right; returns rows x 1.
template <typename S>
Vector<S> row_sums(const Matrix<S>& x);

/// out(:, k) = table(ids[k], :)^T. Throws IndexError on a bad id.
template <typename S>
Matrix<S> gather_rows(const Matrix<S>& table, std::span<const std::int32_t> ids);

/// table_grad(ids[k], :) += grad(:, k)^T. Repeated ids accumulate.
template <typename S>
void scatter_rows_add(Matrix<S>& table_grad, std::span<const std::int32_t> ids,
                      const Matrix<S>& grad);

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

}  // namespace seqmt
