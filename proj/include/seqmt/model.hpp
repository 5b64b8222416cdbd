#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqmt/attention.hpp"
#include "seqmt/data.hpp"
#include "seqmt/layers.hpp"

namespace seqmt {

struct ModelConfig {
  Index embedding_size = 512;
  Index hidden_size = 512;
  Index depth = 2;
  Index vocab_size = 0;
  double dropout = 0.2;
  /// Apply tanh to W_o H_o + B_o before the output softmax.
  bool output_tanh = true;
  /// One embedding table for both sides instead of two.
  bool shared_embeddings = false;

  /// Throws ConfigError on a non-positive size or a rate outside [0, 1).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Every trainable block of the encoder-decoder, registered once each in a
/// fixed declaration order.
template <typename S>
class ModelParams {
 public:
  explicit ModelParams(const ModelConfig& config);
  ModelParams(const ModelParams&) = delete;
  ModelParams& operator=(const ModelParams&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Weights uniform in [-scale, scale]; LSTM biases 0 except the forget
  /// gate at 1; output bias 0.
  void init_uniform(Rng& rng, double scale = 0.1);

  std::span<ParamBlock<S>* const> blocks() const { return order_; }
  ParamBlock<S>* find(const std::string& name) const;
  Index parameter_count() const;

  std::vector<Matrix<S>> snapshot() const;
  void restore(const std::vector<Matrix<S>>& values);

  /// Copies values from a model of identical layout, converting scalars.
  template <typename T>
  void copy_from(const ModelParams<T>& other) {
    auto src = other.blocks();
    if (src.size() != order_.size()) throw ConfigError("copy_from: parameter layouts differ");
    for (std::size_t i = 0; i < order_.size(); ++i) {
      if (src[i]->name != order_[i]->name || src[i]->weight.shape() != order_[i]->weight.shape()) {
        throw ConfigError("copy_from: block '" + src[i]->name + "' does not match '" +
                          order_[i]->name + "'");
      }
      order_[i]->weight.data = src[i]->weight.data.template cast<S>();
    }
  }

  ParamBlock<S>* src_embedding = nullptr;
  ParamBlock<S>* tgt_embedding = nullptr;
  LstmParams<S> enc_forward;
  LstmParams<S> enc_backward;
  /// Unidirectional encoder layers 1 .. depth-1.
  std::vector<LstmParams<S>> enc_upper;
  /// Decoder layers 0 .. depth-1.
  std::vector<LstmParams<S>> decoder;
  AttentionParams<S> attention;
  /// W_o (hidden x vocab) and B_o.
  LinearParams<S> output;

 private:
  ParamBlock<S>* add(const std::string& name, Index rows, Index cols);
  LstmParams<S> add_lstm(const std::string& prefix, Index input, Index hidden);

  ModelConfig config_;
  std::vector<std::unique_ptr<ParamBlock<S>>> storage_;
  std::vector<ParamBlock<S>*> order_;
};

/// Stacked encoder: a bidirectional first layer whose two directions are
/// summed per position, then depth-1 unidirectional layers with dropout on
/// the inputs they receive from the layer below. Padded positions carry the
/// previous state through unchanged.
template <typename S>
class EncoderNet : public OwningChain<S> {
 public:
  /// source is time x batch; returns the packed top-layer states.
  Variable<S>* init(ModelParams<S>& params, const IdMatrix& source, const MaskMatrix& mask,
                    const RunMode* mode, Rng* rng);

  std::string_view kind() const override { return "Encoder"; }

  Variable<S>& top_states() { return *top_; }
  /// Summed bidirectional output at position t.
  Variable<S>& first_layer_output(Index t) { return *first_[static_cast<std::size_t>(t)]; }
  /// State handed to decoder layer k: the backward pass at position 0 for
  /// k = 0, otherwise layer k at the last position.
  Variable<S>* final_h(Index k) const { return final_h_[static_cast<std::size_t>(k)]; }
  Variable<S>* final_c(Index k) const { return final_c_[static_cast<std::size_t>(k)]; }

 private:
  Variable<S>* top_ = nullptr;
  std::vector<Variable<S>*> first_;
  std::vector<Variable<S>*> final_h_;
  std::vector<Variable<S>*> final_c_;
};

/// One decoder position: embed the previous token, run the LSTM stack,
/// attend, and apply dropout to the attention output H_o.
template <typename S>
class DecoderStepNet : public OwningChain<S> {
 public:
  Variable<S>* init(ModelParams<S>& params, std::vector<TokenId> prev_tokens,
                    const std::vector<Variable<S>*>& h_prev, const std::vector<Variable<S>*>& c_prev,
                    Variable<S>* source_states, const MaskMatrix& source_mask, const RunMode* mode,
                    Rng* rng);

  std::string_view kind() const override { return "DecoderStep"; }

  Variable<S>* h(Index k) const { return h_[static_cast<std::size_t>(k)]; }
  Variable<S>* c(Index k) const { return c_[static_cast<std::size_t>(k)]; }
  const Attention<S>& attention() const { return *attention_; }
  Variable<S>& output() { return *output_; }

 private:
  std::vector<Variable<S>*> h_;
  std::vector<Variable<S>*> c_;
  Attention<S>* attention_ = nullptr;
  Variable<S>* output_ = nullptr;
};

/// Teacher-forced graph over a whole batch. Its exit holds the output
/// logits, vocab x (targetLen * batch), column j * batch + b for position j
/// of sentence b; tanh is applied when the config asks for it.
template <typename S>
class Seq2SeqGraph : public OwningChain<S> {
 public:
  Variable<S>* init(ModelParams<S>& params, const Batch& batch, RunMode mode, Rng* rng);

  std::string_view kind() const override { return "Seq2Seq"; }

  Variable<S>& logits() { return *this->exit(); }
  EncoderNet<S>& encoder() { return *encoder_; }
  DecoderStepNet<S>& step(Index j) { return *steps_[static_cast<std::size_t>(j)]; }

 private:
  EncoderNet<S>* encoder_ = nullptr;
  std::vector<DecoderStepNet<S>*> steps_;
};

template <typename S>
struct EncodedSource {
  Matrix<S> top_states;  // hidden x (sourceLen * batch)
  std::vector<LstmState<S>> final_states;
  MaskMatrix mask;  // sourceLen x batch

  Index batch() const { return mask.cols(); }
  Index length() const { return mask.rows(); }
  /// Replicates a single-sentence encoding into `copies` columns.
  EncodedSource repeat(Index copies) const;
};

template <typename S>
using DecoderState = std::vector<LstmState<S>>;

template <typename S>
EncodedSource<S> encode(const ModelParams<S>& params, const IdMatrix& source, const MaskMatrix& mask,
                        RunMode mode = RunMode::kInfer, Rng* rng = nullptr);

template <typename S>
DecoderState<S> initial_decoder_state(const EncodedSource<S>& encoded);

/// One decoder position for every column: returns vocab x batch log
/// probabilities and advances `state`.
template <typename S>
Matrix<S> decode_step(const ModelParams<S>& params, const std::vector<TokenId>& prev_tokens,
                      DecoderState<S>& state, const EncodedSource<S>& encoded,
                      RunMode mode = RunMode::kInfer, Rng* rng = nullptr);

/// Columns of `state` picked by `columns` (a beam reorder).
template <typename S>
DecoderState<S> select_columns(const DecoderState<S>& state, const std::vector<Index>& columns);

/// log p(y | x) per sentence in inference mode, summed in double over
/// target positions in order (EOS included, padding excluded).
template <typename S>
std::vector<double> sequence_log_prob(const ModelParams<S>& params, const Batch& batch);

/// Output-layer logits as produced by the decoder head, for one step's H_o.
template <typename S>
Matrix<S> output_logits(const ModelParams<S>& params, const Matrix<S>& h_o);

/// Configuration, vocabulary and parameters as stored in a checkpoint.
template <typename S>
struct Model {
  ModelConfig config;
  Vocabulary vocab;
  std::unique_ptr<ModelParams<S>> params;

  Model(ModelConfig cfg, Vocabulary v)
      : config(cfg), vocab(std::move(v)), params(std::make_unique<ModelParams<S>>(cfg)) {}
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary little-endian container: magic, version, config, vocabulary,
/// then every block as (name, rows, cols, row-major float32 payload).
template <typename S>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const Vocabulary& vocab, const ModelParams<S>& params);
template <typename S>
void save_checkpoint(const std::filesystem::path& path, const Model<S>& model) {
  save_checkpoint(path, model.config, model.vocab, *model.params);
}
template <typename S>
Model<S> load_checkpoint(const std::filesystem::path& path);

extern template class ModelParams<float>;
extern template class ModelParams<double>;
extern template class EncoderNet<float>;
extern template class EncoderNet<double>;
extern template class DecoderStepNet<float>;
extern template class DecoderStepNet<double>;
extern template class Seq2SeqGraph<float>;
extern template class Seq2SeqGraph<double>;

}  // namespace seqmt
