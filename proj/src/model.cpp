#include "seqmt/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace seqmt {

void ModelConfig::validate() const {
  auto positive = [](Index v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
  };
  positive(embedding_size, "embedding size");
  positive(hidden_size, "hidden size");
  positive(depth, "depth");
  positive(vocab_size, "vocabulary size");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must lie in [0, 1), got " + std::to_string(dropout));
  }
}

// ---------------------------------------------------------------- ModelParams

template <typename S>
ModelParams<S>::ModelParams(const ModelConfig& config) : config_(config) {
  config_.validate();
  const Index e = config_.embedding_size;
  const Index h = config_.hidden_size;
  const Index v = config_.vocab_size;
  if (config_.shared_embeddings) {
    src_embedding = tgt_embedding = add("embedding", v, e);
  } else {
    src_embedding = add("src_embedding", v, e);
    tgt_embedding = add("tgt_embedding", v, e);
  }
  enc_forward = add_lstm("encoder.fwd.0", e, h);
  enc_backward = add_lstm("encoder.bwd.0", e, h);
  for (Index k = 1; k < config_.depth; ++k) {
    enc_upper.push_back(add_lstm("encoder." + std::to_string(k), h, h));
  }
  for (Index k = 0; k < config_.depth; ++k) {
    decoder.push_back(add_lstm("decoder." + std::to_string(k), k == 0 ? e : h, h));
  }
  attention.w_a = add("attention.w_a", h, h);
  attention.w_c = add("attention.w_c", 2 * h, h);
  output.w = add("output.w", h, v);
  output.b = add("output.b", v, 1);
}

template <typename S>
ParamBlock<S>* ModelParams<S>::add(const std::string& name, Index rows, Index cols) {
  for (const auto* p : order_) {
    if (p->name == name) throw ConstructionError("duplicate parameter name '" + name + "'");
  }
  storage_.push_back(std::make_unique<ParamBlock<S>>(name, rows, cols));
  order_.push_back(storage_.back().get());
  return order_.back();
}

template <typename S>
LstmParams<S> ModelParams<S>::add_lstm(const std::string& prefix, Index input, Index hidden) {
  LstmParams<S> p;
  p.w = add(prefix + ".w", input + hidden, 4 * hidden);
  p.b = add(prefix + ".b", 4 * hidden, 1);
  return p;
}

template <typename S>
void ModelParams<S>::init_uniform(Rng& rng, double scale) {
  for (auto* p : order_) {
    auto& d = p->weight.data;
    for (Index i = 0; i < d.size(); ++i) d.data()[i] = static_cast<S>(rng.uniform(-scale, scale));
  }
  auto reset_bias = [](const LstmParams<S>& lp) {
    const Index h = lp.hidden_dim();
    auto& b = lp.b->weight.data;
    b.setZero();
    b.middleRows(h, h).setOnes();
  };
  reset_bias(enc_forward);
  reset_bias(enc_backward);
  for (const auto& lp : enc_upper) reset_bias(lp);
  for (const auto& lp : decoder) reset_bias(lp);
  output.b->weight.data.setZero();
}

template <typename S>
ParamBlock<S>* ModelParams<S>::find(const std::string& name) const {
  for (auto* p : order_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <typename S>
Index ModelParams<S>::parameter_count() const {
  Index n = 0;
  for (const auto* p : order_) n += p->weight.data.size();
  return n;
}

template <typename S>
std::vector<Matrix<S>> ModelParams<S>::snapshot() const {
  std::vector<Matrix<S>> out;
  out.reserve(order_.size());
  for (const auto* p : order_) out.push_back(p->weight.data);
  return out;
}

template <typename S>
void ModelParams<S>::restore(const std::vector<Matrix<S>>& values) {
  if (values.size() != order_.size()) throw ConfigError("restore: snapshot has the wrong block count");
  for (std::size_t i = 0; i < order_.size(); ++i) {
    if (shape_of(values[i]) != order_[i]->weight.shape()) {
      throw ConfigError("restore: shape mismatch for '" + order_[i]->name + "'");
    }
    order_[i]->weight.data = values[i];
  }
}

namespace {

template <typename S>
RowVector<S> mask_row(const MaskMatrix& mask, Index t) {
  return mask.row(t).template cast<S>();
}

std::vector<TokenId> id_row(const IdMatrix& ids, Index t) {
  std::vector<TokenId> out(static_cast<std::size_t>(ids.cols()));
  for (Index b = 0; b < ids.cols(); ++b) out[static_cast<std::size_t>(b)] = ids(t, b);
  return out;
}

// Inference graphs only read parameter data, never call backward, and may
// run concurrently on a shared model.
template <typename S>
ModelParams<S>& readonly(const ModelParams<S>& params) {
  return const_cast<ModelParams<S>&>(params);
}

}  // namespace

// ---------------------------------------------------------------- EncoderNet

template <typename S>
Variable<S>* EncoderNet<S>::init(ModelParams<S>& params, const IdMatrix& source,
                                 const MaskMatrix& mask, const RunMode* mode, Rng* rng) {
  const Index len = source.rows();
  if (len < 1 || source.cols() < 1) throw ConfigError("encode: empty source batch");
  if (mask.rows() != len || mask.cols() != source.cols()) {
    throw ShapeError("encode: mask " + to_string(shape_of(mask)) + " for source " +
                     to_string(shape_of(source)));
  }
  const auto& cfg = params.config();
  const auto T = static_cast<std::size_t>(len);

  std::vector<Variable<S>*> emb(T);
  for (Index t = 0; t < len; ++t) {
    emb[static_cast<std::size_t>(t)] =
        this->template append<EmbeddingLayer<S>>().init(params.src_embedding, id_row(source, t));
  }

  std::vector<LstmLayer<S>*> fwd(T);
  std::vector<LstmLayer<S>*> bwd(T);
  for (Index t = 0; t < len; ++t) {
    auto& l = this->template append<LstmLayer<S>>();
    LstmLayer<S>* prev = t > 0 ? fwd[static_cast<std::size_t>(t - 1)] : nullptr;
    l.init(params.enc_forward, emb[static_cast<std::size_t>(t)], prev ? &prev->h : nullptr,
           prev ? &prev->c : nullptr, mask_row<S>(mask, t));
    fwd[static_cast<std::size_t>(t)] = &l;
  }
  for (Index t = len - 1; t >= 0; --t) {
    auto& l = this->template append<LstmLayer<S>>();
    LstmLayer<S>* prev = t + 1 < len ? bwd[static_cast<std::size_t>(t + 1)] : nullptr;
    l.init(params.enc_backward, emb[static_cast<std::size_t>(t)], prev ? &prev->h : nullptr,
           prev ? &prev->c : nullptr, mask_row<S>(mask, t));
    bwd[static_cast<std::size_t>(t)] = &l;
  }

  first_.assign(T, nullptr);
  std::vector<Variable<S>*> below(T);
  for (std::size_t t = 0; t < T; ++t) {
    first_[t] = this->template append<AddLayer<S>>().init(&fwd[t]->h, &bwd[t]->h);
    below[t] = first_[t];
  }
  final_h_ = {&bwd[0]->h};
  final_c_ = {&bwd[0]->c};

  for (const auto& lp : params.enc_upper) {
    std::vector<LstmLayer<S>*> layer(T);
    for (Index t = 0; t < len; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      Variable<S>* in = this->template append<DropoutLayer<S>>().init(below[ut], cfg.dropout, mode, rng);
      auto& l = this->template append<LstmLayer<S>>();
      LstmLayer<S>* prev = t > 0 ? layer[ut - 1] : nullptr;
      l.init(lp, in, prev ? &prev->h : nullptr, prev ? &prev->c : nullptr, mask_row<S>(mask, t));
      layer[ut] = &l;
    }
    for (std::size_t t = 0; t < T; ++t) below[t] = &layer[t]->h;
    final_h_.push_back(&layer[T - 1]->h);
    final_c_.push_back(&layer[T - 1]->c);
  }

  top_ = this->template append<ConcatColumnsLayer<S>>().init(below);
  return top_;
}

// ---------------------------------------------------------------- DecoderStepNet

template <typename S>
Variable<S>* DecoderStepNet<S>::init(ModelParams<S>& params, std::vector<TokenId> prev_tokens,
                                     const std::vector<Variable<S>*>& h_prev,
                                     const std::vector<Variable<S>*>& c_prev,
                                     Variable<S>* source_states, const MaskMatrix& source_mask,
                                     const RunMode* mode, Rng* rng) {
  const auto& cfg = params.config();
  const auto depth = static_cast<std::size_t>(cfg.depth);
  if (h_prev.size() != depth || c_prev.size() != depth) {
    throw ConstructionError("decoder step: need state for " + std::to_string(depth) + " layers");
  }
  Variable<S>* x =
      this->template append<EmbeddingLayer<S>>().init(params.tgt_embedding, std::move(prev_tokens));
  h_.clear();
  c_.clear();
  for (std::size_t k = 0; k < depth; ++k) {
    if (k > 0) x = this->template append<DropoutLayer<S>>().init(x, cfg.dropout, mode, rng);
    auto& l = this->template append<LstmLayer<S>>();
    x = l.init(params.decoder[k], x, h_prev[k], c_prev[k]);
    h_.push_back(&l.h);
    c_.push_back(&l.c);
  }
  attention_ = &this->template append<Attention<S>>();
  Variable<S>* h_o = attention_->init(params.attention, source_states, x, source_mask);
  output_ = this->template append<DropoutLayer<S>>().init(h_o, cfg.dropout, mode, rng);
  return output_;
}

// ---------------------------------------------------------------- Seq2SeqGraph

template <typename S>
Variable<S>* Seq2SeqGraph<S>::init(ModelParams<S>& params, const Batch& batch, RunMode mode, Rng* rng) {
  this->set_mode(mode);
  const RunMode* flag = this->mode_flag();
  encoder_ = &this->template append<EncoderNet<S>>();
  encoder_->init(params, batch.source, batch.source_mask, flag, rng);

  const IdMatrix input = batch.decoder_input();
  const auto depth = static_cast<std::size_t>(params.config().depth);
  std::vector<Variable<S>*> h(depth);
  std::vector<Variable<S>*> c(depth);
  for (std::size_t k = 0; k < depth; ++k) {
    h[k] = encoder_->final_h(static_cast<Index>(k));
    c[k] = encoder_->final_c(static_cast<Index>(k));
  }
  steps_.clear();
  std::vector<Variable<S>*> outs;
  for (Index j = 0; j < input.rows(); ++j) {
    auto& step = this->template append<DecoderStepNet<S>>();
    outs.push_back(step.init(params, id_row(input, j), h, c, &encoder_->top_states(),
                             batch.source_mask, flag, rng));
    for (std::size_t k = 0; k < depth; ++k) {
      h[k] = step.h(static_cast<Index>(k));
      c[k] = step.c(static_cast<Index>(k));
    }
    steps_.push_back(&step);
  }
  Variable<S>* x = this->template append<ConcatColumnsLayer<S>>().init(outs);
  x = this->template append<LinearLayer<S>>().init(params.output, x);
  if (params.config().output_tanh) {
    x = this->template append<ActivationLayer<S>>().init(x, Activation::kTanh);
  }
  this->set_exit(x);
  return x;
}

// ---------------------------------------------------------------- inference helpers

template <typename S>
EncodedSource<S> EncodedSource<S>::repeat(Index copies) const {
  if (batch() != 1) throw ShapeError("repeat: encoding must hold a single sentence");
  EncodedSource out;
  const Index len = length();
  out.top_states.resize(top_states.rows(), len * copies);
  for (Index t = 0; t < len; ++t) {
    for (Index k = 0; k < copies; ++k) out.top_states.col(t * copies + k) = top_states.col(t);
  }
  out.mask = mask.replicate(1, copies);
  for (const auto& s : final_states) {
    out.final_states.push_back({s.h.replicate(1, copies), s.c.replicate(1, copies)});
  }
  return out;
}

template <typename S>
EncodedSource<S> encode(const ModelParams<S>& params, const IdMatrix& source, const MaskMatrix& mask,
                        RunMode mode, Rng* rng) {
  EncoderNet<S> net;
  net.set_mode(mode);
  net.init(readonly(params), source, mask, net.mode_flag(), rng);
  net.run_forward();
  EncodedSource<S> out;
  out.top_states = net.top_states().data;
  out.mask = mask;
  for (Index k = 0; k < params.config().depth; ++k) {
    out.final_states.push_back({net.final_h(k)->data, net.final_c(k)->data});
  }
  return out;
}

template <typename S>
DecoderState<S> initial_decoder_state(const EncodedSource<S>& encoded) {
  return encoded.final_states;
}

template <typename S>
Matrix<S> output_logits(const ModelParams<S>& params, const Matrix<S>& h_o) {
  Variable<S> x(h_o.rows(), h_o.cols());
  x.data = h_o;
  LinearLayer<S> linear;
  ActivationLayer<S> act;
  Variable<S>* y = linear.init(readonly(params).output, &x);
  linear.forward();
  if (params.config().output_tanh) {
    y = act.init(y, Activation::kTanh);
    act.forward();
  }
  return y->data;
}

template <typename S>
Matrix<S> decode_step(const ModelParams<S>& params, const std::vector<TokenId>& prev_tokens,
                      DecoderState<S>& state, const EncodedSource<S>& encoded, RunMode mode,
                      Rng* rng) {
  const auto depth = static_cast<std::size_t>(params.config().depth);
  if (state.size() != depth) throw StateError("decode_step: decoder state is not initialized");
  const auto batch = static_cast<Index>(prev_tokens.size());
  if (encoded.batch() != batch) {
    throw ShapeError("decode_step: " + std::to_string(batch) + " tokens for an encoding of batch " +
                     std::to_string(encoded.batch()));
  }
  std::vector<Variable<S>> hv(depth);
  std::vector<Variable<S>> cv(depth);
  std::vector<Variable<S>*> hp(depth);
  std::vector<Variable<S>*> cp(depth);
  for (std::size_t k = 0; k < depth; ++k) {
    if (state[k].h.cols() != batch) throw StateError("decode_step: state batch mismatch");
    hv[k].resize(state[k].h.rows(), batch);
    cv[k].resize(state[k].c.rows(), batch);
    hv[k].data = state[k].h;
    cv[k].data = state[k].c;
    hp[k] = &hv[k];
    cp[k] = &cv[k];
  }
  Variable<S> hs(encoded.top_states.rows(), encoded.top_states.cols());
  hs.data = encoded.top_states;

  DecoderStepNet<S> net;
  net.set_mode(mode);
  net.init(readonly(params), prev_tokens, hp, cp, &hs, encoded.mask, net.mode_flag(), rng);
  net.run_forward();
  for (std::size_t k = 0; k < depth; ++k) {
    state[k].h = net.h(static_cast<Index>(k))->data;
    state[k].c = net.c(static_cast<Index>(k))->data;
  }
  return log_softmax_columns<S>(output_logits(params, net.output().data));
}

template <typename S>
DecoderState<S> select_columns(const DecoderState<S>& state, const std::vector<Index>& columns) {
  DecoderState<S> out(state.size());
  for (std::size_t k = 0; k < state.size(); ++k) {
    out[k].h.resize(state[k].h.rows(), static_cast<Index>(columns.size()));
    out[k].c.resize(state[k].c.rows(), static_cast<Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) {
      out[k].h.col(static_cast<Index>(j)) = state[k].h.col(columns[j]);
      out[k].c.col(static_cast<Index>(j)) = state[k].c.col(columns[j]);
    }
  }
  return out;
}

template <typename S>
std::vector<double> sequence_log_prob(const ModelParams<S>& params, const Batch& batch) {
  Seq2SeqGraph<S> graph;
  graph.init(readonly(params), batch, RunMode::kInfer, nullptr);
  const Matrix<S> logp = log_softmax_columns<S>(graph.run_forward().data);
  const Index n = batch.size();
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (Index b = 0; b < n; ++b) {
    for (Index j = 0; j < batch.target.rows(); ++j) {
      if (!batch.target_mask(j, b)) continue;
      const TokenId y = batch.target(j, b);
      if (y < 0 || y >= logp.rows()) {
        throw IndexError("sequence_log_prob: target id " + std::to_string(y) + " outside vocabulary");
      }
      out[static_cast<std::size_t>(b)] += static_cast<double>(logp(y, j * n + b));
    }
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'S', 'Q', 'M', 'T', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  std::uint8_t u8() {
    const int c = in_.get();
    if (c == std::char_traits<char>::eof()) throw IoError(path_ + ": truncated checkpoint");
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::uint32_t>(in_.gcount()) != n) throw IoError(path_ + ": truncated checkpoint");
    return s;
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const Vocabulary& vocab, const ModelParams<S>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  Writer w(out);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(config.embedding_size));
  w.u32(static_cast<std::uint32_t>(config.hidden_size));
  w.u32(static_cast<std::uint32_t>(config.depth));
  w.u32(static_cast<std::uint32_t>(config.vocab_size));
  w.f64(config.dropout);
  w.u8(config.output_tanh ? 1 : 0);
  w.u8(config.shared_embeddings ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(vocab.size()));
  for (const auto& t : vocab.tokens()) w.str(t);
  const auto blocks = params.blocks();
  w.u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto* p : blocks) {
    const auto& d = p->weight.data;
    w.str(p->name);
    w.u64(static_cast<std::uint64_t>(d.rows()));
    w.u64(static_cast<std::uint64_t>(d.cols()));
    for (Index i = 0; i < d.rows(); ++i) {
      for (Index j = 0; j < d.cols(); ++j) w.f32(static_cast<float>(d(i, j)));
    }
  }
  out.flush();
  if (!out) throw IoError("error writing checkpoint " + path.string());
}

template <typename S>
Model<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  Reader r(in, path.string());
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.embedding_size = r.u32();
  cfg.hidden_size = r.u32();
  cfg.depth = r.u32();
  cfg.vocab_size = r.u32();
  cfg.dropout = r.f64();
  cfg.output_tanh = r.u8() != 0;
  cfg.shared_embeddings = r.u8() != 0;
  const auto vocab_count = r.u32();
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < vocab_count; ++i) {
    auto t = r.str();
    if (i >= static_cast<std::uint32_t>(kNumReserved)) tokens.push_back(std::move(t));
  }
  Vocabulary vocab(tokens);
  if (vocab.size() != cfg.vocab_size) {
    throw ConfigError(path.string() + ": vocabulary has " + std::to_string(vocab.size()) +
                      " entries but the model expects " + std::to_string(cfg.vocab_size));
  }
  Model<S> model(cfg, std::move(vocab));
  const auto count = r.u32();
  if (count != model.params->blocks().size()) {
    throw ConfigError(path.string() + ": checkpoint has " + std::to_string(count) +
                      " parameter blocks, expected " + std::to_string(model.params->blocks().size()));
  }
  for (std::uint32_t b = 0; b < count; ++b) {
    const auto name = r.str();
    const auto rows = static_cast<Index>(r.u64());
    const auto cols = static_cast<Index>(r.u64());
    auto* p = model.params->find(name);
    if (p == nullptr) throw ConfigError(path.string() + ": unknown parameter block '" + name + "'");
    if (p->weight.shape() != Shape{rows, cols}) {
      throw ConfigError(path.string() + ": block '" + name + "' is " +
                        to_string(Shape{rows, cols}) + ", expected " + to_string(p->weight.shape()));
    }
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) p->weight.data(i, j) = static_cast<S>(r.f32());
    }
  }
  return model;
}

#define SEQMT_INSTANTIATE_MODEL(S)                                                                \
  template class ModelParams<S>;                                                                  \
  template class EncoderNet<S>;                                                                   \
  template class DecoderStepNet<S>;                                                               \
  template class Seq2SeqGraph<S>;                                                                 \
  template struct EncodedSource<S>;                                                               \
  template EncodedSource<S> encode<S>(const ModelParams<S>&, const IdMatrix&, const MaskMatrix&,  \
                                      RunMode, Rng*);                                             \
  template DecoderState<S> initial_decoder_state<S>(const EncodedSource<S>&);                     \
  template Matrix<S> output_logits<S>(const ModelParams<S>&, const Matrix<S>&);                   \
  template Matrix<S> decode_step<S>(const ModelParams<S>&, const std::vector<TokenId>&,           \
                                    DecoderState<S>&, const EncodedSource<S>&, RunMode, Rng*);    \
  template DecoderState<S> select_columns<S>(const DecoderState<S>&, const std::vector<Index>&);   \
  template std::vector<double> sequence_log_prob<S>(const ModelParams<S>&, const Batch&);         \
  template void save_checkpoint<S>(const std::filesystem::path&, const ModelConfig&,              \
                                   const Vocabulary&, const ModelParams<S>&);                     \
  template Model<S> load_checkpoint<S>(const std::filesystem::path&);

SEQMT_INSTANTIATE_MODEL(float)
SEQMT_INSTANTIATE_MODEL(double)

}  // namespace seqmt
