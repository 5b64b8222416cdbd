#pragma once

// Gradient-check fixtures, one per layer type plus the attention network
// and the whole toy encoder-decoder. See gradcheck.hpp for the protocol.

#include <memory>

#include "gradcheck.hpp"
#include "seqmt/attention.hpp"
#include "seqmt/layers.hpp"
#include "seqmt/model.hpp"

namespace seqmt::testing {

template <typename S>
struct LinearFx {
  ParamBlock<S> w{"w", 5, 4};
  ParamBlock<S> b{"b", 4, 1};
  Variable<S> x;
  void setup(Rng& rng) {
    x = random_variable<S>(5, 3, rng);
    fill_uniform(w.weight.data, rng);
    fill_uniform(b.weight.data, rng);
  }
  std::vector<Variable<S>*> inputs() { return {&x}; }
  std::vector<ParamBlock<S>*> params() { return {&w, &b}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) { return {c.template append<LinearLayer<S>>().init({&w, &b}, &x)}; }
};

template <typename S>
struct LinearNoBiasFx {
  ParamBlock<S> w{"w", 3, 6};
  Variable<S> x;
  void setup(Rng& rng) {
    x = random_variable<S>(3, 2, rng);
    fill_uniform(w.weight.data, rng);
  }
  std::vector<Variable<S>*> inputs() { return {&x}; }
  std::vector<ParamBlock<S>*> params() { return {&w}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    return {c.template append<LinearLayer<S>>().init({&w, nullptr}, &x)};
  }
};

template <typename S>
struct EmbeddingFx {
  ParamBlock<S> table{"table", 7, 3};
  void setup(Rng& rng) { fill_uniform(table.weight.data, rng); }
  std::vector<Variable<S>*> inputs() { return {}; }
  std::vector<ParamBlock<S>*> params() { return {&table}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    // a repeated id must accumulate
    return {c.template append<EmbeddingLayer<S>>().init(&table, {1, 3, 1, 6})};
  }
};

template <typename S, Activation A>
struct ActivationFxImpl {
  Variable<S> x;
  void setup(Rng& rng) { x = random_variable<S>(4, 3, rng, 2.0); }
  std::vector<Variable<S>*> inputs() { return {&x}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) { return {c.template append<ActivationLayer<S>>().init(&x, A)}; }
};
template <typename S>
using TanhFx = ActivationFxImpl<S, Activation::kTanh>;
template <typename S>
using SigmoidFx = ActivationFxImpl<S, Activation::kSigmoid>;

template <typename S>
struct AddFx {
  Variable<S> a, b;
  void setup(Rng& rng) {
    a = random_variable<S>(3, 4, rng);
    b = random_variable<S>(3, 4, rng);
  }
  std::vector<Variable<S>*> inputs() { return {&a, &b}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) { return {c.template append<AddLayer<S>>().init(&a, &b)}; }
};

template <typename S>
struct ProductFx {
  Variable<S> a, b;
  void setup(Rng& rng) {
    a = random_variable<S>(3, 4, rng);
    b = random_variable<S>(3, 4, rng);
  }
  std::vector<Variable<S>*> inputs() { return {&a, &b}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) { return {c.template append<ProductLayer<S>>().init(&a, &b)}; }
};

template <typename S>
struct SoftmaxFx {
  Variable<S> x;
  void setup(Rng& rng) { x = random_variable<S>(5, 3, rng, 2.0); }
  std::vector<Variable<S>*> inputs() { return {&x}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) { return {c.template append<SoftmaxLayer<S>>().init(&x)}; }
};

template <typename S>
struct MaskedSoftmaxFx {
  Variable<S> x;
  MaskMatrix mask;
  void setup(Rng& rng) {
    x = random_variable<S>(4, 3, rng, 2.0);
    mask = MaskMatrix::Ones(4, 3);
    mask(3, 0) = 0;
    mask(2, 1) = 0;
    mask(3, 1) = 0;
  }
  std::vector<Variable<S>*> inputs() { return {&x}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) { return {c.template append<SoftmaxLayer<S>>().init(&x, mask)}; }
};

template <typename S>
struct DuplicateFx {
  Variable<S> x;
  void setup(Rng& rng) { x = random_variable<S>(3, 2, rng); }
  std::vector<Variable<S>*> inputs() { return {&x}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    auto& d = c.template append<DuplicateLayer<S>>();
    d.init(&x);
    return {&d.y0, &d.y1};
  }
};

template <typename S>
struct ConcatenateFx {
  Variable<S> a, b;
  void setup(Rng& rng) {
    a = random_variable<S>(3, 2, rng);
    b = random_variable<S>(4, 2, rng);
  }
  std::vector<Variable<S>*> inputs() { return {&a, &b}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    return {c.template append<ConcatenateLayer<S>>().init(&a, &b)};
  }
};

template <typename S>
struct ConcatColumnsFx {
  Variable<S> a, b, d;
  void setup(Rng& rng) {
    a = random_variable<S>(3, 2, rng);
    b = random_variable<S>(3, 2, rng);
    d = random_variable<S>(3, 2, rng);
  }
  std::vector<Variable<S>*> inputs() { return {&a, &b, &d}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    return {c.template append<ConcatColumnsLayer<S>>().init({&a, &b, &d})};
  }
};

/// Dropout in training mode; the mask stream is reseeded for every build so
/// all evaluations see the same mask.
template <typename S>
struct DropoutFx {
  Variable<S> x;
  RunMode mode = RunMode::kTrain;
  Rng mask_rng{0};
  void setup(Rng& rng) { x = random_variable<S>(6, 5, rng); }
  std::vector<Variable<S>*> inputs() { return {&x}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    mask_rng.reseed(99);
    return {c.template append<DropoutLayer<S>>().init(&x, 0.3, &mode, &mask_rng)};
  }
};

template <typename S>
struct LstmFxBase {
  ParamBlock<S> w{"lstm.w", 3 + 4, 16};
  ParamBlock<S> b{"lstm.b", 16, 1};
  Variable<S> x, h0, c0;
  void setup(Rng& rng) {
    x = random_variable<S>(3, 2, rng);
    h0 = random_variable<S>(4, 2, rng);
    c0 = random_variable<S>(4, 2, rng);
    fill_uniform(w.weight.data, rng);
    fill_uniform(b.weight.data, rng);
  }
  std::vector<ParamBlock<S>*> params() { return {&w, &b}; }
};

template <typename S>
struct LstmFx : LstmFxBase<S> {
  std::vector<Variable<S>*> inputs() { return {&this->x, &this->h0, &this->c0}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    auto& l = c.template append<LstmLayer<S>>();
    l.init({&this->w, &this->b}, &this->x, &this->h0, &this->c0);
    return {&l.h, &l.c};
  }
};

template <typename S>
struct LstmMaskedFx : LstmFxBase<S> {
  std::vector<Variable<S>*> inputs() { return {&this->x, &this->h0, &this->c0}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    auto& l = c.template append<LstmLayer<S>>();
    RowVector<S> mask(2);
    mask << S(1), S(0);
    l.init({&this->w, &this->b}, &this->x, &this->h0, &this->c0, mask);
    return {&l.h, &l.c};
  }
};

template <typename S>
struct LstmZeroStateFx : LstmFxBase<S> {
  std::vector<Variable<S>*> inputs() { return {&this->x}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    auto& l = c.template append<LstmLayer<S>>();
    l.init({&this->w, &this->b}, &this->x, nullptr, nullptr);
    return {&l.h, &l.c};
  }
};

/// Three unrolled steps sharing one parameter block.
template <typename S>
struct LstmUnrolledFx : LstmFxBase<S> {
  Variable<S> x2, x3;
  void setup(Rng& rng) {
    LstmFxBase<S>::setup(rng);
    x2 = random_variable<S>(3, 2, rng);
    x3 = random_variable<S>(3, 2, rng);
  }
  std::vector<Variable<S>*> inputs() { return {&this->x, &x2, &x3, &this->h0, &this->c0}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    LstmLayer<S>* prev = nullptr;
    for (Variable<S>* in : {&this->x, &x2, &x3}) {
      auto& l = c.template append<LstmLayer<S>>();
      l.init({&this->w, &this->b}, in, prev ? &prev->h : &this->h0, prev ? &prev->c : &this->c0);
      prev = &l;
    }
    return {&prev->h, &prev->c};
  }
};

template <typename S>
struct MultiplyHsHtFx {
  Variable<S> hs, v;
  void setup(Rng& rng) {
    hs = random_variable<S>(4, 3 * 2, rng);
    v = random_variable<S>(4, 2, rng);
  }
  std::vector<Variable<S>*> inputs() { return {&hs, &v}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) { return {c.template append<MultiplyHsHt<S>>().init(&hs, &v)}; }
};

template <typename S>
struct WeightedHsFx {
  Variable<S> hs, a;
  void setup(Rng& rng) {
    hs = random_variable<S>(4, 3 * 2, rng);
    a = random_variable<S>(3, 2, rng);
  }
  std::vector<Variable<S>*> inputs() { return {&hs, &a}; }
  std::vector<ParamBlock<S>*> params() { return {}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) { return {c.template append<WeightedHs<S>>().init(&hs, &a)}; }
};

template <typename S>
struct AttentionFx {
  ParamBlock<S> w_a{"attention.w_a", 4, 4};
  ParamBlock<S> w_c{"attention.w_c", 8, 4};
  Variable<S> hs, ht;
  MaskMatrix mask;
  void setup(Rng& rng) {
    hs = random_variable<S>(4, 3 * 2, rng);
    ht = random_variable<S>(4, 2, rng);
    fill_uniform(w_a.weight.data, rng);
    fill_uniform(w_c.weight.data, rng);
    mask = MaskMatrix::Ones(3, 2);
    mask(2, 1) = 0;
  }
  std::vector<Variable<S>*> inputs() { return {&hs, &ht}; }
  std::vector<ParamBlock<S>*> params() { return {&w_a, &w_c}; }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    return {c.template append<Attention<S>>().init({&w_a, &w_c}, &hs, &ht, mask)};
  }
};

/// Toy encoder-decoder: vocabulary 11, embedding and hidden size 4, depth 2,
/// source length 3 and target length 3 (EOS included), one padded sentence
/// in a batch of two, dropout active.
template <typename S>
struct ToyModelFx {
  std::unique_ptr<ModelParams<S>> model;
  Batch batch;
  Rng drop_rng{0};
  static ModelConfig config() {
    ModelConfig mc;
    mc.embedding_size = 4;
    mc.hidden_size = 4;
    mc.depth = 2;
    mc.vocab_size = 11;
    mc.dropout = 0.2;
    return mc;
  }
  void setup(Rng& rng) {
    model = std::make_unique<ModelParams<S>>(config());
    model->init_uniform(rng, 0.8);
    auto tok = [&] { return static_cast<TokenId>(kNumReserved + rng.below(11 - kNumReserved)); };
    batch = make_batch({{tok(), tok(), tok()}, {tok(), tok()}}, {{tok(), tok()}, {tok()}});
  }
  std::vector<Variable<S>*> inputs() { return {}; }
  std::vector<ParamBlock<S>*> params() {
    auto b = model->blocks();
    return {b.begin(), b.end()};
  }
  std::vector<Variable<S>*> build(OwningChain<S>& c) {
    drop_rng.reseed(7);
    auto& g = c.template append<Seq2SeqGraph<S>>();
    return {g.init(*model, batch, RunMode::kTrain, &drop_rng)};
  }
};

}  // namespace seqmt::testing
