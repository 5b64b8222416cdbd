#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqmt/tensor.hpp"

namespace seqmt {

enum class RunMode { kTrain, kInfer };

/// A named trainable weight. Layers hold pointers to blocks they do not
/// own, so one block may be shared by several layers.
template <typename S>
struct ParamBlock {
  std::string name;
  Variable<S> weight;
  bool learnable = true;

  ParamBlock() = default;
  ParamBlock(std::string n, Index rows, Index cols, bool learn = true)
      : name(std::move(n)), weight(rows, cols), learnable(learn) {
    weight.data.setZero();
  }
};

/// The unit of composition. Subclasses implement the three passes:
///
///   forward            reads input data, writes output data
///   backward           reads output grad, adds into input grad
///   calculateGradient  reads output grad and input data, adds into
///                      parameter grads
///
/// Gradients are always accumulated, never overwritten.
template <typename S>
class Layer {
 public:
  Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;
  virtual ~Layer() = default;

  void forward() {
    if (!initialized()) {
      throw ConstructionError(std::string(kind()) + ": forward on an uninitialized layer");
    }
    do_forward();
    forwarded_ = true;
  }
  void backward() {
    require_forward("backward");
    do_backward();
  }
  void calculateGradient() {
    require_forward("calculateGradient");
    do_calculate_gradient();
  }

  virtual bool initialized() const = 0;
  virtual std::string_view kind() const = 0;
  /// Variables owned and written by this layer.
  virtual std::vector<Variable<S>*> outputs() = 0;
  /// Parameter blocks this layer reads; may be shared with other layers.
  virtual std::vector<ParamBlock<S>*> params() { return {}; }
  /// Every Variable written by this layer, including those of nested layers.
  virtual void collect_variables(std::vector<Variable<S>*>& out) {
    for (auto* v : outputs()) out.push_back(v);
  }

  bool forwarded() const { return forwarded_; }

 protected:
  virtual void do_forward() = 0;
  virtual void do_backward() = 0;
  virtual void do_calculate_gradient() {}

  void require_forward(const char* pass) const {
    if (!forwarded_) {
      throw StateError(std::string(kind()) + ": " + pass + " before forward");
    }
  }

 private:
  bool forwarded_ = false;
};

/// An ordered list of layers joined by shared Variables. Forward runs the
/// layers in declaration order; backward runs backward on every layer in
/// reverse order and then calculateGradient on every layer.
///
/// A chain is itself a Layer, so networks nest.
template <typename S>
class LayerChain : public Layer<S> {
 public:
  void push_back(Layer<S>& layer) { layers_.push_back(&layer); }

  /// Variable read by the first layer. Optional: chains that take several
  /// inputs leave it unset.
  void set_entry(Variable<S>* entry) { entry_ = entry; }
  /// Variable whose grad is supplied from outside before backward.
  void set_exit(Variable<S>* exit) { exit_ = exit; }

  Variable<S>* entry() const { return entry_; }
  Variable<S>* exit() const { return exit_ != nullptr ? exit_ : last_output(); }

  std::span<Layer<S>* const> layers() const { return layers_; }

  RunMode mode() const { return mode_; }
  /// Training/inference switch consulted by Dropout layers of this chain.
  void set_mode(RunMode mode) { mode_ = mode; }
  const RunMode* mode_flag() const { return &mode_; }

  /// Runs forward over the chain and returns its exit.
  Variable<S>& run_forward() {
    this->forward();
    Variable<S>* out = exit();
    if (out == nullptr) throw ConstructionError("LayerChain: chain has neither layers nor entry");
    return *out;
  }

  /// Full backward pass of a top-level chain. Resets the gradient of every
  /// Variable written inside the chain (the exit excepted), then runs both
  /// phases. Gradients of parameters and of Variables fed in from outside
  /// accumulate.
  void run_backward() {
    this->require_forward("backward");
    std::vector<Variable<S>*> written;
    collect_variables(written);
    Variable<S>* out = exit();
    for (auto* v : written) {
      if (v != out) v->zero_grad();
    }
    this->backward();
    this->calculateGradient();
  }

  bool initialized() const override {
    for (const auto* l : layers_) {
      if (!l->initialized()) return false;
    }
    return true;
  }
  std::string_view kind() const override { return "LayerChain"; }

  std::vector<Variable<S>*> outputs() override {
    Variable<S>* out = exit();
    if (out == nullptr) return {};
    return {out};
  }

  /// Unique parameter blocks in first-use order.
  std::vector<ParamBlock<S>*> params() override;

  void collect_variables(std::vector<Variable<S>*>& out) override {
    for (auto* l : layers_) l->collect_variables(out);
  }

 protected:
  void do_forward() override {
    for (auto* l : layers_) {
      if (!l->initialized()) {
        throw ConstructionError(std::string(l->kind()) +
                                ": uninitialized layer in chain");
      }
      l->forward();
    }
  }

  void do_backward() override {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) (*it)->backward();
  }

  void do_calculate_gradient() override {
    for (auto* l : layers_) l->calculateGradient();
  }

 private:
  Variable<S>* last_output() const {
    if (layers_.empty()) return entry_;
    auto outs = layers_.back()->outputs();
    return outs.empty() ? nullptr : outs.front();
  }

  std::vector<Layer<S>*> layers_;
  Variable<S>* entry_ = nullptr;
  Variable<S>* exit_ = nullptr;
  RunMode mode_ = RunMode::kTrain;
};

/// A LayerChain that owns dynamically created layers, for graphs whose
/// size depends on the batch (unrolled recurrences).
template <typename S>
class OwningChain : public LayerChain<S> {
 public:
  template <typename L>
  L& make() {
    auto ptr = std::make_unique<L>();
    L& ref = *ptr;
    owned_.push_back(std::move(ptr));
    return ref;
  }

  /// Creates a layer and appends it to the chain.
  template <typename L>
  L& append() {
    L& ref = make<L>();
    this->push_back(ref);
    return ref;
  }

 private:
  std::vector<std::unique_ptr<Layer<S>>> owned_;
};

/// Collects the distinct parameter blocks of several chains in declaration
/// order. A block reachable through several layers appears once; two
/// distinct blocks with the same name raise ConstructionError.
template <typename S>
std::vector<ParamBlock<S>*> collect_params(std::span<LayerChain<S>* const> chains);

/// Zeroes the gradient of every block.
template <typename S>
void zero_grads(std::span<ParamBlock<S>* const> blocks);

extern template class LayerChain<float>;
extern template class LayerChain<double>;

}  // namespace seqmt
