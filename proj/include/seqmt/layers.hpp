#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "seqmt/graph.hpp"
#include "seqmt/rng.hpp"

namespace seqmt {

/// w is dimInput x dimOutput; b (optional) is dimOutput x 1.
template <typename S>
struct LinearParams {
  ParamBlock<S>* w = nullptr;
  ParamBlock<S>* b = nullptr;

  Index input_dim() const { return w->weight.rows(); }
  Index output_dim() const { return w->weight.cols(); }
};

/// y = w^T x (+ b on every column).
template <typename S>
class LinearLayer : public Layer<S> {
 public:
  Variable<S>* init(const LinearParams<S>& params, Variable<S>* x);

  bool initialized() const override { return x_ != nullptr && p_.w != nullptr; }
  std::string_view kind() const override { return "Linear"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }
  std::vector<ParamBlock<S>*> params() override;

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;
  void do_calculate_gradient() override;

 private:
  LinearParams<S> p_;
  Variable<S>* x_ = nullptr;
};

/// Looks up one table row per id; the table is vocabulary x dim.
template <typename S>
class EmbeddingLayer : public Layer<S> {
 public:
  Variable<S>* init(ParamBlock<S>* table, std::vector<std::int32_t> ids);

  bool initialized() const override { return table_ != nullptr; }
  std::string_view kind() const override { return "Embedding"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }
  std::vector<ParamBlock<S>*> params() override { return {table_}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override {}
  void do_calculate_gradient() override;

 private:
  ParamBlock<S>* table_ = nullptr;
  std::vector<std::int32_t> ids_;
};

enum class Activation { kTanh, kSigmoid };

template <typename S>
class ActivationLayer : public Layer<S> {
 public:
  Variable<S>* init(Variable<S>* x, Activation fn);

  bool initialized() const override { return x_ != nullptr; }
  std::string_view kind() const override { return "Activation"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  Variable<S>* x_ = nullptr;
  Activation fn_ = Activation::kTanh;
};

/// y = a + b elementwise.
template <typename S>
class AddLayer : public Layer<S> {
 public:
  Variable<S>* init(Variable<S>* a, Variable<S>* b);

  bool initialized() const override { return a_ != nullptr && b_ != nullptr; }
  std::string_view kind() const override { return "Add"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  Variable<S>* a_ = nullptr;
  Variable<S>* b_ = nullptr;
};

/// y = a * b elementwise.
template <typename S>
class ProductLayer : public Layer<S> {
 public:
  Variable<S>* init(Variable<S>* a, Variable<S>* b);

  bool initialized() const override { return a_ != nullptr && b_ != nullptr; }
  std::string_view kind() const override { return "Product"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  Variable<S>* a_ = nullptr;
  Variable<S>* b_ = nullptr;
};

/// Column softmax, optionally restricted to unmasked rows.
template <typename S>
class SoftmaxLayer : public Layer<S> {
 public:
  Variable<S>* init(Variable<S>* x, std::optional<MaskMatrix> mask = std::nullopt);

  bool initialized() const override { return x_ != nullptr; }
  std::string_view kind() const override { return "Softmax"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  Variable<S>* x_ = nullptr;
  std::optional<MaskMatrix> mask_;
};

/// Fan-out: two outputs carrying x; backward sums both gradients.
template <typename S>
class DuplicateLayer : public Layer<S> {
 public:
  /// Returns the first copy; the second is y1.
  Variable<S>* init(Variable<S>* x);

  bool initialized() const override { return x_ != nullptr; }
  std::string_view kind() const override { return "Duplicate"; }
  std::vector<Variable<S>*> outputs() override { return {&y0, &y1}; }

  Variable<S> y0;
  Variable<S> y1;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  Variable<S>* x_ = nullptr;
};

/// Stacks rows: y = [a; b].
template <typename S>
class ConcatenateLayer : public Layer<S> {
 public:
  Variable<S>* init(Variable<S>* a, Variable<S>* b);

  bool initialized() const override { return a_ != nullptr && b_ != nullptr; }
  std::string_view kind() const override { return "Concatenate"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  Variable<S>* a_ = nullptr;
  Variable<S>* b_ = nullptr;
};

/// Places equally shaped inputs side by side: y = [x0 x1 ... xn].
template <typename S>
class ConcatColumnsLayer : public Layer<S> {
 public:
  Variable<S>* init(std::vector<Variable<S>*> parts);

  bool initialized() const override { return !parts_.empty(); }
  std::string_view kind() const override { return "ConcatColumns"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  std::vector<Variable<S>*> parts_;
};

/// Inverted dropout: in training, each element survives with probability
/// 1 - rate and is scaled by 1 / (1 - rate); in inference it is the identity.
template <typename S>
class DropoutLayer : public Layer<S> {
 public:
  Variable<S>* init(Variable<S>* x, double rate, const RunMode* mode, Rng* rng);

  bool initialized() const override { return x_ != nullptr && mode_ != nullptr; }
  std::string_view kind() const override { return "Dropout"; }
  std::vector<Variable<S>*> outputs() override { return {&y}; }

  Variable<S> y;

 protected:
  void do_forward() override;
  void do_backward() override;

 private:
  Variable<S>* x_ = nullptr;
  double rate_ = 0;
  const RunMode* mode_ = nullptr;
  Rng* rng_ = nullptr;
  bool active_ = false;
  Matrix<S> keep_;
};

/// Gate weights over [input; previous hidden], gates stacked along the
/// output dimension in the order input, forget, cell, output. Each gate
/// block is (inputDim + hiddenDim) x hiddenDim.
template <typename S>
struct LstmParams {
  ParamBlock<S>* w = nullptr;
  ParamBlock<S>* b = nullptr;

  Index hidden_dim() const { return w->weight.cols() / 4; }
  Index input_dim() const { return w->weight.rows() - hidden_dim(); }
};

template <typename S>
struct LstmState {
  Matrix<S> h;
  Matrix<S> c;
};

/// One LSTM time step:
///   i, f, o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c').
///
/// A null previous state means zeros. With a step mask (1 x batch), columns
/// whose mask is 0 copy the previous state through unchanged.
template <typename S>
class LstmLayer : public Layer<S> {
 public:
  /// Returns the new hidden state; the new cell state is c.
  Variable<S>* init(const LstmParams<S>& params, Variable<S>* x, Variable<S>* h_prev,
                    Variable<S>* c_prev, std::optional<RowVector<S>> mask = std::nullopt);

  bool initialized() const override { return x_ != nullptr && p_.w != nullptr; }
  std::string_view kind() const override { return "Lstm"; }
  std::vector<Variable<S>*> outputs() override { return {&h, &c}; }
  std::vector<ParamBlock<S>*> params() override { return {p_.w, p_.b}; }

  Variable<S> h;
  Variable<S> c;

 protected:
  void do_forward() override;
  void do_backward() override;
  void do_calculate_gradient() override;

 private:
  LstmParams<S> p_;
  Variable<S>* x_ = nullptr;
  Variable<S>* h_prev_ = nullptr;
  Variable<S>* c_prev_ = nullptr;
  std::optional<RowVector<S>> mask_;

  Matrix<S> z_;      // [x; h_prev]
  Matrix<S> gates_;  // activated i, f, g, o
  Matrix<S> c_new_;  // unmasked c'
  Matrix<S> tanh_c_;
  Matrix<S> c_prev_value_;
  Matrix<S> d_gates_;  // pre-activation gradients, filled by backward
};

#define SEQMT_EXTERN_LAYERS(S)                 \
  extern template class LinearLayer<S>;        \
  extern template class EmbeddingLayer<S>;     \
  extern template class ActivationLayer<S>;    \
  extern template class AddLayer<S>;           \
  extern template class ProductLayer<S>;       \
  extern template class SoftmaxLayer<S>;       \
  extern template class DuplicateLayer<S>;     \
  extern template class ConcatenateLayer<S>;   \
  extern template class ConcatColumnsLayer<S>; \
  extern template class DropoutLayer<S>;       \
  extern template class LstmLayer<S>;

SEQMT_EXTERN_LAYERS(float)
SEQMT_EXTERN_LAYERS(double)

#undef SEQMT_EXTERN_LAYERS

}  // namespace seqmt
