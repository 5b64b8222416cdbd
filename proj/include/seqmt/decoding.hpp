#pragma once

#include <string>
#include <vector>

#include "seqmt/model.hpp"

namespace seqmt {

struct DecodeConfig {
  Index beam_size = 10;
  double length_penalty = 0.6;
  /// Output length limit is floor(max_len_factor * sourceLen) + max_len_offset,
  /// counting the final EOS.
  double max_len_factor = 2.0;
  Index max_len_offset = 10;
  /// Finished hypotheses returned besides the best.
  Index nbest = 1;

  void validate() const;
  Index max_length(Index source_length) const;
};

/// ((5 + length) / 6)^alpha
double length_penalty(Index length, double alpha);

struct Hypothesis {
  Sentence tokens;  // after BOS; ends with EOS when finished
  double log_prob = 0;
  double score = 0;  // log_prob / length_penalty
  bool finished = false;
};

struct Translation {
  Sentence tokens;  // EOS stripped
  double log_prob = 0;
  double score = 0;
  /// No hypothesis reached EOS within the length limit; the best live one
  /// is returned instead.
  bool truncated = false;
  /// Best first, at most DecodeConfig::nbest entries.
  std::vector<Hypothesis> nbest;
};

/// Beam search over one source sentence. Candidates are ranked by
/// accumulated log probability; ties go to the earlier beam entry, then to
/// the lower token id. Finished hypotheses are ranked by penalized score.
template <typename S>
Translation beam_search(const ModelParams<S>& params, const Sentence& source, const DecodeConfig& cfg);

/// Argmax per step (lowest id on ties) until EOS or max_len tokens.
template <typename S>
Translation greedy_decode(const ModelParams<S>& params, const Sentence& source, Index max_len);

struct TranslateOptions {
  DecodeConfig decode;
  int threads = 1;
  bool greedy = false;
};

struct TranslatedLine {
  std::string text;
  Translation translation;
};

/// Translates tokenized lines, one result per input line in input order.
/// Empty lines give empty output. Work is spread over `threads` workers,
/// longest sentences first.
template <typename S>
std::vector<TranslatedLine> translate_lines(const Model<S>& model, const std::vector<std::string>& lines,
                                            const TranslateOptions& options);

/// `index ||| tokens ||| score` lines for every n-best entry.
std::string format_nbest(std::size_t index, const Translation& t, const Vocabulary& vocab);

}  // namespace seqmt
