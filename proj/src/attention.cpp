#include "seqmt/attention.hpp"

namespace seqmt {

namespace {

template <typename S>
Index source_length(const Variable<S>& hs, Index batch, const char* who) {
  if (batch == 0 || hs.cols() % batch != 0) {
    throw ShapeError(std::string(who) + ": source states " + to_string(hs.shape()) +
                     " do not split into batch " + std::to_string(batch));
  }
  return hs.cols() / batch;
}

}  // namespace

template <typename S>
Variable<S>* MultiplyHsHt<S>::init(Variable<S>* hs, Variable<S>* v) {
  hs_ = hs;
  v_ = v;
  return &y;
}

template <typename S>
void MultiplyHsHt<S>::do_forward() {
  const Index batch = v_->cols();
  const Index len = source_length(*hs_, batch, "MultiplyHsHt");
  if (hs_->rows() != v_->rows()) {
    throw ShapeError("MultiplyHsHt: source states " + to_string(hs_->shape()) +
                     " and target " + to_string(v_->shape()) + " differ in hidden size");
  }
  y.resize(len, batch);
  const Index hid = v_->rows();
  for (Index t = 0; t < len; ++t) {
    for (Index b = 0; b < batch; ++b) {
      const S* hcol = hs_->data.col(t * batch + b).data();
      const S* vcol = v_->data.col(b).data();
      S dot = 0;
      for (Index i = 0; i < hid; ++i) dot += hcol[i] * vcol[i];
      y.data(t, b) = dot;
    }
  }
}

template <typename S>
void MultiplyHsHt<S>::do_backward() {
  const Index batch = v_->cols();
  const Index len = y.rows();
  for (Index t = 0; t < len; ++t) {
    for (Index b = 0; b < batch; ++b) {
      const S g = y.grad(t, b);
      if (g == S(0)) continue;
      hs_->grad.col(t * batch + b) += g * v_->data.col(b);
      v_->grad.col(b) += g * hs_->data.col(t * batch + b);
    }
  }
}

template <typename S>
Variable<S>* WeightedHs<S>::init(Variable<S>* hs, Variable<S>* a) {
  hs_ = hs;
  a_ = a;
  return &y;
}

template <typename S>
void WeightedHs<S>::do_forward() {
  const Index batch = a_->cols();
  const Index len = source_length(*hs_, batch, "WeightedHs");
  if (a_->rows() != len) {
    throw ShapeError("WeightedHs: alignment " + to_string(a_->shape()) + " for source length " +
                     std::to_string(len));
  }
  y.resize(hs_->rows(), batch);
  y.data.setZero();
  for (Index b = 0; b < batch; ++b) {
    for (Index t = 0; t < len; ++t) {
      const S w = a_->data(t, b);
      if (w == S(0)) continue;
      y.data.col(b) += w * hs_->data.col(t * batch + b);
    }
  }
}

template <typename S>
void WeightedHs<S>::do_backward() {
  const Index batch = a_->cols();
  const Index len = a_->rows();
  const Index hid = hs_->rows();
  for (Index b = 0; b < batch; ++b) {
    const S* g = y.grad.col(b).data();
    for (Index t = 0; t < len; ++t) {
      const S* hcol = hs_->data.col(t * batch + b).data();
      S dot = 0;
      for (Index i = 0; i < hid; ++i) dot += hcol[i] * g[i];
      a_->grad(t, b) += dot;
      const S w = a_->data(t, b);
      if (w != S(0)) hs_->grad.col(t * batch + b) += w * y.grad.col(b);
    }
  }
}

template <typename S>
Variable<S>* Attention<S>::init(const AttentionParams<S>& params, Variable<S>* hs, Variable<S>* ht,
                                const MaskMatrix& source_mask) {
  if (params.w_a == nullptr || params.w_c == nullptr) {
    throw ConstructionError("Attention: missing w_a or w_c");
  }
  Variable<S>* tx;
  tx = dupHt.init(ht);
  this->push_back(dupHt);

  tx = linearHt.init({params.w_a, nullptr}, tx);
  this->push_back(linearHt);

  tx = multiplyHsHt.init(hs, tx);
  this->push_back(multiplyHsHt);

  tx = softmax.init(tx, source_mask);
  this->push_back(softmax);

  tx = weightedHs.init(hs, tx);
  this->push_back(weightedHs);

  tx = concateCsHt.init(tx, &dupHt.y1);
  this->push_back(concateCsHt);

  tx = linearCst.init({params.w_c, nullptr}, tx);
  this->push_back(linearCst);

  tx = actCst.init(tx, Activation::kTanh);
  this->push_back(actCst);

  return tx;
}

template <typename S>
AttentionOutput<S> attend(const Matrix<S>& hs, const Matrix<S>& ht, const AttentionParams<S>& params,
                          const MaskMatrix& source_mask) {
  Variable<S> hs_var(hs.rows(), hs.cols());
  hs_var.data = hs;
  Variable<S> ht_var(ht.rows(), ht.cols());
  ht_var.data = ht;
  Attention<S> net;
  net.init(params, &hs_var, &ht_var, source_mask);
  net.run_forward();
  return {net.alignment().data, net.context().data, net.combined().data, net.output().data};
}

template class MultiplyHsHt<float>;
template class MultiplyHsHt<double>;
template class WeightedHs<float>;
template class WeightedHs<double>;
template class Attention<float>;
template class Attention<double>;
template AttentionOutput<float> attend<float>(const Matrix<float>&, const Matrix<float>&,
                                              const AttentionParams<float>&, const MaskMatrix&);
template AttentionOutput<double> attend<double>(const Matrix<double>&, const Matrix<double>&,
                                                const AttentionParams<double>&, const MaskMatrix&);

}  // namespace seqmt
