#include "seqmt/layers.hpp"

#include <cmath>

namespace seqmt {

namespace {

template <typename S>
void require_same_shape(const char* who, const Variable<S>& a, const Variable<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(who) + ": operand shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}

}  // namespace

// ---------------------------------------------------------------- Linear

template <typename S>
Variable<S>* LinearLayer<S>::init(const LinearParams<S>& params, Variable<S>* x) {
  if (params.w == nullptr) throw ConstructionError("Linear: missing weight block");
  p_ = params;
  x_ = x;
  return &y;
}

template <typename S>
std::vector<ParamBlock<S>*> LinearLayer<S>::params() {
  if (p_.b != nullptr) return {p_.w, p_.b};
  return {p_.w};
}

template <typename S>
void LinearLayer<S>::do_forward() {
  const auto& w = p_.w->weight.data;
  if (x_->rows() != w.rows()) {
    throw ShapeError("Linear: input is " + to_string(x_->shape()) + " but weight is " +
                     to_string(shape_of(w)));
  }
  y.resize(w.cols(), x_->cols());
  gemm<S>(w, true, x_->data, false, S(1), S(0), y.data);
  if (p_.b != nullptr) y.data.colwise() += p_.b->weight.data.col(0);
}

template <typename S>
void LinearLayer<S>::do_backward() {
  gemm<S>(p_.w->weight.data, false, y.grad, false, S(1), S(1), x_->grad);
}

template <typename S>
void LinearLayer<S>::do_calculate_gradient() {
  gemm<S>(x_->data, false, y.grad, true, S(1), S(1), p_.w->weight.grad);
  if (p_.b != nullptr) p_.b->weight.grad.col(0) += row_sums(y.grad);
}

// ---------------------------------------------------------------- Embedding

template <typename S>
Variable<S>* EmbeddingLayer<S>::init(ParamBlock<S>* table, std::vector<std::int32_t> ids) {
  table_ = table;
  ids_ = std::move(ids);
  return &y;
}

template <typename S>
void EmbeddingLayer<S>::do_forward() {
  Matrix<S> out = gather_rows<S>(table_->weight.data, ids_);
  y.resize(out.rows(), out.cols());
  y.data = std::move(out);
}

template <typename S>
void EmbeddingLayer<S>::do_calculate_gradient() {
  scatter_rows_add<S>(table_->weight.grad, ids_, y.grad);
}

// ---------------------------------------------------------------- Activation

template <typename S>
Variable<S>* ActivationLayer<S>::init(Variable<S>* x, Activation fn) {
  x_ = x;
  fn_ = fn;
  return &y;
}

template <typename S>
void ActivationLayer<S>::do_forward() {
  y.resize(x_->rows(), x_->cols());
  y.data = fn_ == Activation::kTanh ? tanh<S>(x_->data) : sigmoid<S>(x_->data);
}

template <typename S>
void ActivationLayer<S>::do_backward() {
  const auto yv = y.data.array();
  if (fn_ == Activation::kTanh) {
    x_->grad.array() += y.grad.array() * (S(1) - yv * yv);
  } else {
    x_->grad.array() += y.grad.array() * (yv * (S(1) - yv));
  }
}

// ---------------------------------------------------------------- Add / Product

template <typename S>
Variable<S>* AddLayer<S>::init(Variable<S>* a, Variable<S>* b) {
  a_ = a;
  b_ = b;
  return &y;
}

template <typename S>
void AddLayer<S>::do_forward() {
  require_same_shape("Add", *a_, *b_);
  y.resize(a_->rows(), a_->cols());
  y.data = a_->data + b_->data;
}

template <typename S>
void AddLayer<S>::do_backward() {
  a_->grad += y.grad;
  b_->grad += y.grad;
}

template <typename S>
Variable<S>* ProductLayer<S>::init(Variable<S>* a, Variable<S>* b) {
  a_ = a;
  b_ = b;
  return &y;
}

template <typename S>
void ProductLayer<S>::do_forward() {
  require_same_shape("Product", *a_, *b_);
  y.resize(a_->rows(), a_->cols());
  y.data = a_->data.cwiseProduct(b_->data);
}

template <typename S>
void ProductLayer<S>::do_backward() {
  a_->grad += y.grad.cwiseProduct(b_->data);
  b_->grad += y.grad.cwiseProduct(a_->data);
}

// ---------------------------------------------------------------- Softmax

template <typename S>
Variable<S>* SoftmaxLayer<S>::init(Variable<S>* x, std::optional<MaskMatrix> mask) {
  x_ = x;
  mask_ = std::move(mask);
  return &y;
}

template <typename S>
void SoftmaxLayer<S>::do_forward() {
  y.resize(x_->rows(), x_->cols());
  y.data = mask_ ? softmax_columns<S>(x_->data, *mask_) : softmax_columns<S>(x_->data);
}

template <typename S>
void SoftmaxLayer<S>::do_backward() {
  for (Index j = 0; j < y.cols(); ++j) {
    S dot = 0;
    for (Index i = 0; i < y.rows(); ++i) dot += y.data(i, j) * y.grad(i, j);
    for (Index i = 0; i < y.rows(); ++i) x_->grad(i, j) += y.data(i, j) * (y.grad(i, j) - dot);
  }
}

// ---------------------------------------------------------------- Duplicate

template <typename S>
Variable<S>* DuplicateLayer<S>::init(Variable<S>* x) {
  x_ = x;
  return &y0;
}

template <typename S>
void DuplicateLayer<S>::do_forward() {
  y0.resize(x_->rows(), x_->cols());
  y1.resize(x_->rows(), x_->cols());
  y0.data = x_->data;
  y1.data = x_->data;
}

template <typename S>
void DuplicateLayer<S>::do_backward() {
  x_->grad += y0.grad;
  x_->grad += y1.grad;
}

// ---------------------------------------------------------------- Concatenate

template <typename S>
Variable<S>* ConcatenateLayer<S>::init(Variable<S>* a, Variable<S>* b) {
  a_ = a;
  b_ = b;
  return &y;
}

template <typename S>
void ConcatenateLayer<S>::do_forward() {
  if (a_->cols() != b_->cols()) {
    throw ShapeError("Concatenate: column counts differ: " + to_string(a_->shape()) + " and " +
                     to_string(b_->shape()));
  }
  y.resize(a_->rows() + b_->rows(), a_->cols());
  y.data.topRows(a_->rows()) = a_->data;
  y.data.bottomRows(b_->rows()) = b_->data;
}

template <typename S>
void ConcatenateLayer<S>::do_backward() {
  a_->grad += y.grad.topRows(a_->rows());
  b_->grad += y.grad.bottomRows(b_->rows());
}

// ---------------------------------------------------------------- ConcatColumns

template <typename S>
Variable<S>* ConcatColumnsLayer<S>::init(std::vector<Variable<S>*> parts) {
  parts_ = std::move(parts);
  return &y;
}

template <typename S>
void ConcatColumnsLayer<S>::do_forward() {
  const Shape part = parts_.front()->shape();
  for (const auto* p : parts_) {
    if (p->shape() != part) {
      throw ShapeError("ConcatColumns: part " + to_string(p->shape()) + " differs from " +
                       to_string(part));
    }
  }
  y.resize(part.rows, part.cols * static_cast<Index>(parts_.size()));
  for (std::size_t t = 0; t < parts_.size(); ++t) {
    y.data.middleCols(static_cast<Index>(t) * part.cols, part.cols) = parts_[t]->data;
  }
}

template <typename S>
void ConcatColumnsLayer<S>::do_backward() {
  const Index width = parts_.front()->cols();
  for (std::size_t t = 0; t < parts_.size(); ++t) {
    parts_[t]->grad += y.grad.middleCols(static_cast<Index>(t) * width, width);
  }
}

// ---------------------------------------------------------------- Dropout

template <typename S>
Variable<S>* DropoutLayer<S>::init(Variable<S>* x, double rate, const RunMode* mode, Rng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("Dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  x_ = x;
  rate_ = rate;
  mode_ = mode;
  rng_ = rng;
  return &y;
}

template <typename S>
void DropoutLayer<S>::do_forward() {
  y.resize(x_->rows(), x_->cols());
  active_ = *mode_ == RunMode::kTrain && rate_ > 0.0;
  if (!active_) {
    y.data = x_->data;
    return;
  }
  if (rng_ == nullptr) throw ConstructionError("Dropout: training mode needs an Rng");
  const S scale = S(1.0 / (1.0 - rate_));
  keep_.resize(x_->rows(), x_->cols());
  for (Index i = 0; i < keep_.size(); ++i) {
    keep_.data()[i] = rng_->bernoulli(rate_) ? S(0) : scale;
  }
  y.data = x_->data.cwiseProduct(keep_);
}

template <typename S>
void DropoutLayer<S>::do_backward() {
  if (active_) {
    x_->grad += y.grad.cwiseProduct(keep_);
  } else {
    x_->grad += y.grad;
  }
}

// ---------------------------------------------------------------- Lstm

template <typename S>
Variable<S>* LstmLayer<S>::init(const LstmParams<S>& params, Variable<S>* x, Variable<S>* h_prev,
                                Variable<S>* c_prev, std::optional<RowVector<S>> mask) {
  if (params.w == nullptr || params.b == nullptr) {
    throw ConstructionError("Lstm: missing parameter blocks");
  }
  if (params.w->weight.cols() % 4 != 0 || params.b->weight.rows() != params.w->weight.cols()) {
    throw ConstructionError("Lstm: weight " + to_string(params.w->weight.shape()) +
                            " and bias " + to_string(params.b->weight.shape()) +
                            " do not describe four gates");
  }
  if ((h_prev == nullptr) != (c_prev == nullptr)) {
    throw ConstructionError("Lstm: previous h and c must both be given or both be null");
  }
  p_ = params;
  x_ = x;
  h_prev_ = h_prev;
  c_prev_ = c_prev;
  mask_ = std::move(mask);
  return &h;
}

template <typename S>
void LstmLayer<S>::do_forward() {
  const Index hid = p_.hidden_dim();
  const Index in = p_.input_dim();
  const Index batch = x_->cols();
  if (x_->rows() != in) {
    throw ShapeError("Lstm: input is " + to_string(x_->shape()) + ", expected " +
                     std::to_string(in) + " rows");
  }
  if (h_prev_ != nullptr &&
      (h_prev_->shape() != Shape{hid, batch} || c_prev_->shape() != Shape{hid, batch})) {
    throw ShapeError("Lstm: previous state is " + to_string(h_prev_->shape()) + "/" +
                     to_string(c_prev_->shape()) + ", expected " + to_string(Shape{hid, batch}));
  }
  if (mask_ && mask_->cols() != batch) {
    throw ShapeError("Lstm: mask has " + std::to_string(mask_->cols()) + " columns for batch " +
                     std::to_string(batch));
  }

  z_.resize(in + hid, batch);
  z_.topRows(in) = x_->data;
  if (h_prev_ != nullptr) {
    z_.bottomRows(hid) = h_prev_->data;
    c_prev_value_ = c_prev_->data;
  } else {
    z_.bottomRows(hid).setZero();
    c_prev_value_.setZero(hid, batch);
  }

  gates_.resize(4 * hid, batch);
  gemm<S>(p_.w->weight.data, true, z_, false, S(1), S(0), gates_);
  gates_.colwise() += p_.b->weight.data.col(0);
  for (Index j = 0; j < batch; ++j) {
    S* g = gates_.col(j).data();
    for (Index r = 0; r < 4 * hid; ++r) {
      g[r] = (r >= 2 * hid && r < 3 * hid) ? std::tanh(g[r]) : S(1) / (S(1) + std::exp(-g[r]));
    }
  }
  const auto ig = gates_.topRows(hid).array();
  const auto fg = gates_.middleRows(hid, hid).array();
  const auto gg = gates_.middleRows(2 * hid, hid).array();
  const auto og = gates_.bottomRows(hid).array();

  c_new_ = (fg * c_prev_value_.array() + ig * gg).matrix();
  tanh_c_ = tanh<S>(c_new_);

  h.resize(hid, batch);
  c.resize(hid, batch);
  h.data = (og * tanh_c_.array()).matrix();
  c.data = c_new_;
  if (mask_) {
    for (Index j = 0; j < batch; ++j) {
      if ((*mask_)(j) != S(0)) continue;
      if (h_prev_ != nullptr) {
        h.data.col(j) = h_prev_->data.col(j);
        c.data.col(j) = c_prev_->data.col(j);
      } else {
        h.data.col(j).setZero();
        c.data.col(j).setZero();
      }
    }
  }
}

template <typename S>
void LstmLayer<S>::do_backward() {
  const Index hid = p_.hidden_dim();
  const Index in = p_.input_dim();
  const Index batch = x_->cols();

  Matrix<S> dh = h.grad;
  Matrix<S> dc = c.grad;
  if (mask_) {
    for (Index j = 0; j < batch; ++j) {
      if ((*mask_)(j) != S(0)) continue;
      if (h_prev_ != nullptr) {
        h_prev_->grad.col(j) += dh.col(j);
        c_prev_->grad.col(j) += dc.col(j);
      }
      dh.col(j).setZero();
      dc.col(j).setZero();
    }
  }

  const auto ig = gates_.topRows(hid).array();
  const auto fg = gates_.middleRows(hid, hid).array();
  const auto gg = gates_.middleRows(2 * hid, hid).array();
  const auto og = gates_.bottomRows(hid).array();
  const auto tc = tanh_c_.array();

  const Matrix<S> dcn = (dc.array() + dh.array() * og * (S(1) - tc * tc)).matrix();
  d_gates_.resize(4 * hid, batch);
  d_gates_.topRows(hid) = (dcn.array() * gg * ig * (S(1) - ig)).matrix();
  d_gates_.middleRows(hid, hid) = (dcn.array() * c_prev_value_.array() * fg * (S(1) - fg)).matrix();
  d_gates_.middleRows(2 * hid, hid) = (dcn.array() * ig * (S(1) - gg * gg)).matrix();
  d_gates_.bottomRows(hid) = (dh.array() * tc * og * (S(1) - og)).matrix();

  Matrix<S> dz(in + hid, batch);
  gemm<S>(p_.w->weight.data, false, d_gates_, false, S(1), S(0), dz);
  x_->grad += dz.topRows(in);
  if (h_prev_ != nullptr) {
    h_prev_->grad += dz.bottomRows(hid);
    c_prev_->grad += (dcn.array() * fg).matrix();
  }
}

template <typename S>
void LstmLayer<S>::do_calculate_gradient() {
  if (d_gates_.cols() != x_->cols()) throw StateError("Lstm: calculateGradient before backward");
  gemm<S>(z_, false, d_gates_, true, S(1), S(1), p_.w->weight.grad);
  p_.b->weight.grad.col(0) += row_sums(d_gates_);
}

#define SEQMT_INSTANTIATE_LAYERS(S)     \
  template class LinearLayer<S>;        \
  template class EmbeddingLayer<S>;     \
  template class ActivationLayer<S>;    \
  template class AddLayer<S>;           \
  template class ProductLayer<S>;       \
  template class SoftmaxLayer<S>;       \
  template class DuplicateLayer<S>;     \
  template class ConcatenateLayer<S>;   \
  template class ConcatColumnsLayer<S>; \
  template class DropoutLayer<S>;       \
  template class LstmLayer<S>;

SEQMT_INSTANTIATE_LAYERS(float)
SEQMT_INSTANTIATE_LAYERS(double)

}  // namespace seqmt
