#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqmt/rng.hpp"
#include "seqmt/tensor.hpp"

namespace seqmt {

using TokenId = std::int32_t;
using Sentence = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kNumReserved = 4;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";

/// Splits on runs of ASCII whitespace.
std::vector<std::string> tokenize(std::string_view line);

/// Reads a text file into lines, dropping the trailing newline (and CR).
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Token <-> id bijection. Ids 0..3 are the reserved PAD, UNK, BOS, EOS.
class Vocabulary {
 public:
  /// Only the reserved entries.
  Vocabulary();
  /// Reserved entries followed by `tokens` in order. Tokens equal to a
  /// reserved literal or repeated are rejected.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  Sentence encode(const std::vector<std::string>& tokens) const;
  Sentence encode_line(std::string_view line) const;
  /// Decodes ids; reserved ids other than UNK are skipped unless
  /// keep_reserved is set.
  std::vector<std::string> decode(const Sentence& ids, bool keep_reserved = false) const;
  std::string decode_line(const Sentence& ids) const;

  /// One token per line, reserved literals first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Joint vocabulary over all files: most frequent first, ties broken
/// lexicographically, truncated so the total size (reserved entries
/// included) is at most `cap`.
Vocabulary build_vocab(const std::vector<std::filesystem::path>& files, Index cap);
Vocabulary build_vocab_from_lines(const std::vector<std::string>& lines, Index cap);

struct ParallelCorpus {
  std::vector<Sentence> source;
  std::vector<Sentence> target;

  std::size_t size() const { return source.size(); }
};

/// Reads two line-aligned files. Line count mismatch raises ConfigError.
ParallelCorpus read_parallel(const std::filesystem::path& source,
                             const std::filesystem::path& target, const Vocabulary& vocab);

/// Padded id matrices for one step. Decoder targets end with EOS; the
/// decoder input is BOS followed by the targets shifted right.
struct Batch {
  IdMatrix source;  // maxSrcLen x batch
  IdMatrix target;  // maxTgtLen x batch, y_1 .. y_m EOS
  std::vector<Index> source_lengths;
  std::vector<Index> target_lengths;  // includes EOS
  MaskMatrix source_mask;
  MaskMatrix target_mask;
  /// Corpus position of each column.
  std::vector<std::size_t> indices;

  Index size() const { return source.cols(); }
  IdMatrix decoder_input() const;
  Index target_tokens() const;
  Index source_tokens() const;
};

/// Assembles one batch from sentence pairs; every source must be non-empty.
Batch make_batch(const std::vector<Sentence>& sources, const std::vector<Sentence>& targets,
                 std::vector<std::size_t> indices = {});
Batch make_batch(const ParallelCorpus& corpus, const std::vector<std::size_t>& indices);

/// Drops pairs with an empty side or a side longer than max_len, shuffles
/// the rest with rng, sorts pools of 20 batches by length, cuts them into
/// batches and shuffles batch order. Raises ConfigError if nothing remains.
std::vector<Batch> make_batches(const ParallelCorpus& corpus, Index batch_size, Index max_len,
                                Rng& rng);

/// Batches in corpus order, without filtering or shuffling.
std::vector<Batch> make_sequential_batches(const ParallelCorpus& corpus, Index batch_size);

struct BleuStats {
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 0;
  Index hypothesis_length = 0;
  Index reference_length = 0;
  double bleu = 0;  // 0..100
};

/// Corpus-level BLEU-4 over tokenized sentences. Clipped n-gram counts are
/// summed over the corpus before taking precisions; a zero corpus precision
/// gives 0.
BleuStats bleu_stats(const std::vector<std::vector<std::string>>& hypotheses,
                     const std::vector<std::vector<std::string>>& references);
double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references);

}  // namespace seqmt
