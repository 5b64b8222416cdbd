#include "seqmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace seqmt {

std::ostream& operator<<(std::ostream& os, const Shape& s) {
  return os << s.rows << "x" << s.cols;
}

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

namespace {

// Accumulates up to four output columns at once so each column of op(a) is
// loaded once per block. The per-element order over kk never changes.
template <typename S, typename BAt>
void accumulate_block(const S* ap, Index lda, Index m, Index k, Index j0,
                      Index nb, const BAt& b_at, S* __restrict acc) {
  std::fill(acc, acc + m * nb, S(0));
  S* __restrict acc0 = acc;
  S* __restrict acc1 = acc + m;
  S* __restrict acc2 = acc + 2 * m;
  S* __restrict acc3 = acc + 3 * m;
  if (nb == 4) {
    for (Index kk = 0; kk < k; ++kk) {
      const S* __restrict col = ap + kk * lda;
      const S b0 = b_at(kk, j0), b1 = b_at(kk, j0 + 1);
      const S b2 = b_at(kk, j0 + 2), b3 = b_at(kk, j0 + 3);
      for (Index i = 0; i < m; ++i) {
        const S v = col[i];
        acc0[i] += v * b0;
        acc1[i] += v * b1;
        acc2[i] += v * b2;
        acc3[i] += v * b3;
      }
    }
    return;
  }
  for (Index jj = 0; jj < nb; ++jj) {
    S* __restrict out = acc + jj * m;
    for (Index kk = 0; kk < k; ++kk) {
      const S* __restrict col = ap + kk * lda;
      const S bv = b_at(kk, j0 + jj);
      for (Index i = 0; i < m; ++i) out[i] += col[i] * bv;
    }
  }
}

template <typename S>
void check_finite(const Matrix<S>& x, const char* what) {
  if (!all_finite(x)) throw NumericError(std::string(what) + ": non-finite input");
}

}  // namespace

template <typename S>
void gemm(const Eigen::Ref<const Matrix<S>>& a, bool transpose_a,
          const Eigen::Ref<const Matrix<S>>& b, bool transpose_b, S alpha,
          S beta, Eigen::Ref<Matrix<S>> c) {
  const Index m = transpose_a ? a.cols() : a.rows();
  const Index k = transpose_a ? a.rows() : a.cols();
  const Index kb = transpose_b ? b.cols() : b.rows();
  const Index n = transpose_b ? b.rows() : b.cols();
  if (k != kb) {
    std::ostringstream os;
    os << "gemm: inner dimensions disagree: a is " << shape_of(a)
       << (transpose_a ? " (transposed)" : "") << ", b is " << shape_of(b)
       << (transpose_b ? " (transposed)" : "");
    throw ShapeError(os.str());
  }
  if (c.rows() != m || c.cols() != n) {
    std::ostringstream os;
    os << "gemm: result is " << shape_of(c) << " but a is " << shape_of(a)
       << (transpose_a ? " (transposed)" : "") << " and b is " << shape_of(b)
       << (transpose_b ? " (transposed)" : "");
    throw ShapeError(os.str());
  }
  if (m == 0 || n == 0) return;

  Matrix<S> a_t;
  const S* ap = a.data();
  Index lda = a.outerStride();
  if (transpose_a) {
    a_t = a.transpose();
    ap = a_t.data();
    lda = m;
  }

  std::vector<S> acc(static_cast<std::size_t>(m) * 4);
  auto store = [&](Index j0, Index nb) {
    for (Index jj = 0; jj < nb; ++jj) {
      const S* src = acc.data() + jj * m;
      S* dst = c.data() + (j0 + jj) * c.outerStride();
      if (beta == S(0)) {
        for (Index i = 0; i < m; ++i) dst[i] = alpha * src[i];
      } else {
        for (Index i = 0; i < m; ++i) dst[i] = alpha * src[i] + beta * dst[i];
      }
    }
  };
  for (Index j0 = 0; j0 < n; j0 += 4) {
    const Index nb = std::min<Index>(4, n - j0);
    if (transpose_b) {
      accumulate_block(ap, lda, m, k, j0, nb,
                       [&](Index kk, Index j) { return b(j, kk); }, acc.data());
    } else {
      accumulate_block(ap, lda, m, k, j0, nb,
                       [&](Index kk, Index j) { return b(kk, j); }, acc.data());
    }
    store(j0, nb);
  }
}

template <typename S>
Matrix<S> matmul(const Matrix<S>& a, bool transpose_a, const Matrix<S>& b,
                 bool transpose_b) {
  Matrix<S> c(transpose_a ? a.cols() : a.rows(), transpose_b ? b.rows() : b.cols());
  gemm<S>(a, transpose_a, b, transpose_b, S(1), S(0), c);
  return c;
}

template <typename S>
Matrix<S> softmax_columns(const Matrix<S>& x) {
  check_finite(x, "softmax_columns");
  Matrix<S> y(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    S mx = -std::numeric_limits<S>::infinity();
    for (Index i = 0; i < x.rows(); ++i) mx = std::max(mx, x(i, j));
    S sum = 0;
    for (Index i = 0; i < x.rows(); ++i) {
      y(i, j) = std::exp(x(i, j) - mx);
      sum += y(i, j);
    }
    for (Index i = 0; i < x.rows(); ++i) y(i, j) /= sum;
  }
  return y;
}

template <typename S>
Matrix<S> softmax_columns(const Matrix<S>& x, const MaskMatrix& mask) {
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw ShapeError("softmax_columns: mask is " + to_string(shape_of(mask)) +
                     " but input is " + to_string(shape_of(x)));
  }
  Matrix<S> y = Matrix<S>::Zero(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    S mx = -std::numeric_limits<S>::infinity();
    bool any = false;
    for (Index i = 0; i < x.rows(); ++i) {
      if (!mask(i, j)) continue;
      if (!std::isfinite(x(i, j))) throw NumericError("softmax_columns: non-finite input");
      mx = std::max(mx, x(i, j));
      any = true;
    }
    if (!any) throw MaskError("softmax_columns: column " + std::to_string(j) + " is fully masked");
    S sum = 0;
    for (Index i = 0; i < x.rows(); ++i) {
      if (!mask(i, j)) continue;
      y(i, j) = std::exp(x(i, j) - mx);
      sum += y(i, j);
    }
    for (Index i = 0; i < x.rows(); ++i) y(i, j) /= sum;
  }
  return y;
}

template <typename S>
Matrix<S> log_softmax_columns(const Matrix<S>& x) {
  check_finite(x, "log_softmax_columns");
  Matrix<S> y(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    S mx = -std::numeric_limits<S>::infinity();
    for (Index i = 0; i < x.rows(); ++i) mx = std::max(mx, x(i, j));
    S sum = 0;
    for (Index i = 0; i < x.rows(); ++i) sum += std::exp(x(i, j) - mx);
    const S lse = mx + std::log(sum);
    for (Index i = 0; i < x.rows(); ++i) y(i, j) = x(i, j) - lse;
  }
  return y;
}

template <typename S>
Matrix<S> tanh(const Matrix<S>& x) {
  Matrix<S> y(x.rows(), x.cols());
  const S* in = x.data();
  S* out = y.data();
  for (Index i = 0; i < x.size(); ++i) out[i] = std::tanh(in[i]);
  return y;
}

template <typename S>
Matrix<S> sigmoid(const Matrix<S>& x) {
  Matrix<S> y(x.rows(), x.cols());
  const S* in = x.data();
  S* out = y.data();
  for (Index i = 0; i < x.size(); ++i) out[i] = S(1) / (S(1) + std::exp(-in[i]));
  return y;
}

template <typename S>
Vector<S> row_sums(const Matrix<S>& x) {
  Vector<S> s = Vector<S>::Zero(x.rows());
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) s(i) += x(i, j);
  }
  return s;
}

template <typename S>
Matrix<S> gather_rows(const Matrix<S>& table, std::span<const std::int32_t> ids) {
  Matrix<S> out(table.cols(), static_cast<Index>(ids.size()));
  for (Index k = 0; k < out.cols(); ++k) {
    const auto id = ids[static_cast<std::size_t>(k)];
    if (id < 0 || id >= table.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(id) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    }
    out.col(k) = table.row(id).transpose();
  }
  return out;
}

template <typename S>
void scatter_rows_add(Matrix<S>& table_grad, std::span<const std::int32_t> ids,
                      const Matrix<S>& grad) {
  if (grad.cols() != static_cast<Index>(ids.size()) || grad.rows() != table_grad.cols()) {
    throw ShapeError("scatter_rows_add: gradient is " + to_string(shape_of(grad)) +
                     " for " + std::to_string(ids.size()) + " ids into table " +
                     to_string(shape_of(table_grad)));
  }
  for (Index k = 0; k < grad.cols(); ++k) {
    const auto id = ids[static_cast<std::size_t>(k)];
    if (id < 0 || id >= table_grad.rows()) {
      throw IndexError("scatter_rows_add: id " + std::to_string(id) + " outside table of " +
                       std::to_string(table_grad.rows()) + " rows");
    }
    table_grad.row(id) += grad.col(k).transpose();
  }
}

#define SEQMT_INSTANTIATE(S)                                                             \
  template void gemm<S>(const Eigen::Ref<const Matrix<S>>&, bool,                         \
                        const Eigen::Ref<const Matrix<S>>&, bool, S, S,                   \
                        Eigen::Ref<Matrix<S>>);                                           \
  template Matrix<S> matmul<S>(const Matrix<S>&, bool, const Matrix<S>&, bool);           \
  template Matrix<S> softmax_columns<S>(const Matrix<S>&);                                \
  template Matrix<S> softmax_columns<S>(const Matrix<S>&, const MaskMatrix&);             \
  template Matrix<S> log_softmax_columns<S>(const Matrix<S>&);                            \
  template Matrix<S> tanh<S>(const Matrix<S>&);                                           \
  template Matrix<S> sigmoid<S>(const Matrix<S>&);                                        \
  template Vector<S> row_sums<S>(const Matrix<S>&);                                       \
  template Matrix<S> gather_rows<S>(const Matrix<S>&, std::span<const std::int32_t>);     \
  template void scatter_rows_add<S>(Matrix<S>&, std::span<const std::int32_t>,            \
                                    const Matrix<S>&);

SEQMT_INSTANTIATE(float)
SEQMT_INSTANTIATE(double)

#undef SEQMT_INSTANTIATE

}  // namespace seqmt
