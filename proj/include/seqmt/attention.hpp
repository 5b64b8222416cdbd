#pragma once

#include "seqmt/layers.hpp"

namespace seqmt {

/// Source states are packed as one hidden x (sourceLen * batch) matrix,
/// time-major: column t * batch + b holds position t of sentence b.

/// Bilinear alignment scores: scores(t, b) = hs(t, b) . v(:, b), where v is
/// the linearly mapped target state.
template <typename S>
class MultiplyHsHt : public Layer<S> {
 public:
  Variable<S>* init(Variable<S>* hs, Variable<S>* v);

  bool initialized() const override { return hs_ != nullptr && v_ != nullptr; }
  std::string_view kind() const override { return "MultiplyHsHt"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  Variable<S>* hs_ = nullptr;
  Variable<S>* v_ = nullptr;
};

/// Context: ctx(:, b) = sum_t a(t, b) * hs(t, b). Zero weights are skipped,
/// so masked positions contribute nothing and receive no gradient.
template <typename S>
class WeightedHs : public Layer<S> {
 public:
  Variable<S>* init(Variable<S>* hs, Variable<S>* a);

  bool initialized() const override { return hs_ != nullptr && a_ != nullptr; }
  std::string_view kind() const override { return "WeightedHs"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  Variable<S>* hs_ = nullptr;
  Variable<S>* a_ = nullptr;
};

/// w_a maps the target state (hidden x hidden, no bias); w_c projects the
/// combined context (2 * hidden x hidden, no bias).
template <typename S>
struct AttentionParams {
  ParamBlock<S>* w_a = nullptr;
  ParamBlock<S>* w_c = nullptr;
};

/// Multiplicative attention as an eight-layer network:
///
///   scores    = hs^T (w_a^T ht)
///   alignment = masked softmax over source positions
///   context   = sum_t alignment_t hs_t
///   combined  = [context; ht]
///   h_o       = tanh(w_c^T combined)
template <typename S>
class Attention : public LayerChain<S> {
 public:
  Variable<S>* init(const AttentionParams<S>& params, Variable<S>* hs, Variable<S>* ht,
                    const MaskMatrix& source_mask);

  std::string_view kind() const override { return "Attention"; }

  const Variable<S>& alignment() const { return softmax.y; }
  const Variable<S>& context() const { return weightedHs.y; }
  const Variable<S>& combined() const { return concateCsHt.y; }
  const Variable<S>& output() const { return actCst.y; }
  Variable<S>& output() { return actCst.y; }

  DuplicateLayer<S> dupHt;
  LinearLayer<S> linearHt;
  MultiplyHsHt<S> multiplyHsHt;
  SoftmaxLayer<S> softmax;
  WeightedHs<S> weightedHs;
  ConcatenateLayer<S> concateCsHt;
  LinearLayer<S> linearCst;
  ActivationLayer<S> actCst;
};

template <typename S>
struct AttentionOutput {
  Matrix<S> alignment;  // sourceLen x batch
  Matrix<S> context;    // hidden x batch
  Matrix<S> combined;   // 2 * hidden x batch
  Matrix<S> h_o;        // hidden x batch
};

/// Forward-only attention over plain matrices. Throws MaskError when a
/// batch column has no unmasked source position.
template <typename S>
AttentionOutput<S> attend(const Matrix<S>& hs, const Matrix<S>& ht, const AttentionParams<S>& params,
                          const MaskMatrix& source_mask);

extern template class MultiplyHsHt<float>;
extern template class MultiplyHsHt<double>;
extern template class WeightedHs<float>;
extern template class WeightedHs<double>;
extern template class Attention<float>;
extern template class Attention<double>;

}  // namespace seqmt
