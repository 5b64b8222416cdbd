#include "seqmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

namespace seqmt {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f'; }

const std::string kReservedTokens[kNumReserved] = {std::string(kPadToken), std::string(kUnkToken),
                                                   std::string(kBosToken), std::string(kEosToken)};

}  // namespace

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("error reading " + path.string());
  return lines;
}

// ---------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  tokens_.reserve(tokens.size() + kNumReserved);
  for (const auto& r : kReservedTokens) {
    index_.emplace(r, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(r);
  }
  for (const auto& t : tokens) {
    if (t.empty()) throw ConfigError("vocabulary: empty token");
    if (!index_.emplace(t, static_cast<TokenId>(tokens_.size())).second) {
      throw ConfigError("vocabulary: token '" + t + "' is reserved or repeated");
    }
    tokens_.push_back(t);
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("vocabulary: id " + std::to_string(id) + " outside size " +
                     std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Sentence Vocabulary::encode(const std::vector<std::string>& tokens) const {
  Sentence ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Sentence Vocabulary::encode_line(std::string_view line) const { return encode(tokenize(line)); }

std::vector<std::string> Vocabulary::decode(const Sentence& ids, bool keep_reserved) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    if (!keep_reserved && id < kNumReserved && id != kUnk) continue;
    out.push_back(token(id));
  }
  return out;
}

std::string Vocabulary::decode_line(const Sentence& ids) const {
  std::string line;
  for (const auto& t : decode(ids)) {
    if (!line.empty()) line += ' ';
    line += t;
  }
  return line;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("error writing " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  if (lines.size() < static_cast<std::size_t>(kNumReserved)) {
    throw ConfigError("vocabulary " + path.string() + " is missing the reserved entries");
  }
  for (TokenId i = 0; i < kNumReserved; ++i) {
    if (lines[static_cast<std::size_t>(i)] != kReservedTokens[i]) {
      throw ConfigError("vocabulary " + path.string() + ": line " + std::to_string(i + 1) +
                        " must be " + kReservedTokens[i]);
    }
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + kNumReserved, lines.end()));
}

Vocabulary build_vocab_from_lines(const std::vector<std::string>& lines, Index cap) {
  if (cap < kNumReserved) {
    throw ConfigError("vocabulary cap " + std::to_string(cap) + " is below the " +
                      std::to_string(kNumReserved) + " reserved entries");
  }
  std::map<std::string, std::int64_t> counts;
  for (const auto& line : lines) {
    for (auto& t : tokenize(line)) ++counts[std::move(t)];
  }
  for (const auto& r : kReservedTokens) counts.erase(r);
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  // map order is lexicographic, so a stable sort on count keeps ties sorted
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const auto keep = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(cap - kNumReserved));
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary(tokens);
}

Vocabulary build_vocab(const std::vector<std::filesystem::path>& files, Index cap) {
  std::vector<std::string> lines;
  for (const auto& f : files) {
    auto part = read_lines(f);
    lines.insert(lines.end(), std::make_move_iterator(part.begin()),
                 std::make_move_iterator(part.end()));
  }
  return build_vocab_from_lines(lines, cap);
}

// ---------------------------------------------------------------- corpus

ParallelCorpus read_parallel(const std::filesystem::path& source,
                             const std::filesystem::path& target, const Vocabulary& vocab) {
  auto src = read_lines(source);
  auto tgt = read_lines(target);
  if (src.size() != tgt.size()) {
    throw ConfigError("parallel corpus: " + source.string() + " has " + std::to_string(src.size()) +
                      " lines but " + target.string() + " has " + std::to_string(tgt.size()));
  }
  ParallelCorpus corpus;
  corpus.source.reserve(src.size());
  corpus.target.reserve(tgt.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    corpus.source.push_back(vocab.encode_line(src[i]));
    corpus.target.push_back(vocab.encode_line(tgt[i]));
  }
  return corpus;
}

// ---------------------------------------------------------------- batches

IdMatrix Batch::decoder_input() const {
  IdMatrix in(target.rows(), target.cols());
  if (in.rows() == 0) return in;
  in.row(0).setConstant(kBos);
  if (in.rows() > 1) in.bottomRows(in.rows() - 1) = target.topRows(target.rows() - 1);
  // positions past the end of a sentence carry PAD
  for (Index b = 0; b < in.cols(); ++b) {
    for (Index t = target_lengths[static_cast<std::size_t>(b)]; t < in.rows(); ++t) in(t, b) = kPad;
  }
  return in;
}

Index Batch::target_tokens() const {
  return std::accumulate(target_lengths.begin(), target_lengths.end(), Index(0));
}

Index Batch::source_tokens() const {
  return std::accumulate(source_lengths.begin(), source_lengths.end(), Index(0));
}

Batch make_batch(const std::vector<Sentence>& sources, const std::vector<Sentence>& targets,
                 std::vector<std::size_t> indices) {
  if (sources.size() != targets.size()) {
    throw ConfigError("make_batch: " + std::to_string(sources.size()) + " sources but " +
                      std::to_string(targets.size()) + " targets");
  }
  if (sources.empty()) throw ConfigError("make_batch: empty batch");
  const auto n = static_cast<Index>(sources.size());
  Index max_src = 0;
  Index max_tgt = 0;
  for (std::size_t b = 0; b < sources.size(); ++b) {
    if (sources[b].empty()) throw ConfigError("make_batch: empty source sentence");
    max_src = std::max<Index>(max_src, static_cast<Index>(sources[b].size()));
    max_tgt = std::max<Index>(max_tgt, static_cast<Index>(targets[b].size()) + 1);
  }
  Batch batch;
  batch.source = IdMatrix::Constant(max_src, n, kPad);
  batch.target = IdMatrix::Constant(max_tgt, n, kPad);
  batch.source_mask = MaskMatrix::Zero(max_src, n);
  batch.target_mask = MaskMatrix::Zero(max_tgt, n);
  for (Index b = 0; b < n; ++b) {
    const auto& src = sources[static_cast<std::size_t>(b)];
    const auto& tgt = targets[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < src.size(); ++t) {
      batch.source(static_cast<Index>(t), b) = src[t];
      batch.source_mask(static_cast<Index>(t), b) = 1;
    }
    for (std::size_t t = 0; t < tgt.size(); ++t) {
      batch.target(static_cast<Index>(t), b) = tgt[t];
      batch.target_mask(static_cast<Index>(t), b) = 1;
    }
    batch.target(static_cast<Index>(tgt.size()), b) = kEos;
    batch.target_mask(static_cast<Index>(tgt.size()), b) = 1;
    batch.source_lengths.push_back(static_cast<Index>(src.size()));
    batch.target_lengths.push_back(static_cast<Index>(tgt.size()) + 1);
  }
  if (indices.empty()) {
    indices.resize(sources.size());
    std::iota(indices.begin(), indices.end(), std::size_t(0));
  }
  batch.indices = std::move(indices);
  return batch;
}

Batch make_batch(const ParallelCorpus& corpus, const std::vector<std::size_t>& indices) {
  std::vector<Sentence> src;
  std::vector<Sentence> tgt;
  for (auto i : indices) {
    src.push_back(corpus.source.at(i));
    tgt.push_back(corpus.target.at(i));
  }
  return make_batch(src, tgt, indices);
}

std::vector<Batch> make_batches(const ParallelCorpus& corpus, Index batch_size, Index max_len,
                                Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto ls = static_cast<Index>(corpus.source[i].size());
    const auto lt = static_cast<Index>(corpus.target[i].size());
    if (ls == 0 || lt == 0 || ls > max_len || lt > max_len) continue;
    keep.push_back(i);
  }
  if (keep.empty()) throw ConfigError("no sentence pairs left after length filtering");
  rng.shuffle(keep);

  const auto bs = static_cast<std::size_t>(batch_size);
  const std::size_t pool = bs * 20;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t start = 0; start < keep.size(); start += pool) {
    const std::size_t end = std::min(keep.size(), start + pool);
    std::stable_sort(keep.begin() + static_cast<std::ptrdiff_t>(start),
                     keep.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       const auto ka = std::make_pair(corpus.source[a].size(), corpus.target[a].size());
                       const auto kb = std::make_pair(corpus.source[b].size(), corpus.target[b].size());
                       return ka < kb;
                     });
    for (std::size_t s = start; s < end; s += bs) {
      groups.emplace_back(keep.begin() + static_cast<std::ptrdiff_t>(s),
                          keep.begin() + static_cast<std::ptrdiff_t>(std::min(end, s + bs)));
    }
  }
  rng.shuffle(groups);
  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) batches.push_back(make_batch(corpus, g));
  return batches;
}

std::vector<Batch> make_sequential_batches(const ParallelCorpus& corpus, Index batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<Batch> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < corpus.size(); start += bs) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(corpus.size(), start + bs); ++i) idx.push_back(i);
    batches.push_back(make_batch(corpus, idx));
  }
  return batches;
}

// ---------------------------------------------------------------- BLEU

namespace {

using NgramCounts = std::map<std::vector<std::string>, Index>;

NgramCounts count_ngrams(const std::vector<std::string>& s, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                      s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuStats bleu_stats(const std::vector<std::vector<std::string>>& hypotheses,
                     const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.size() != references.size()) {
    throw ConfigError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                      std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw ConfigError("bleu: empty hypothesis set");

  Index matched[4] = {0, 0, 0, 0};
  Index total[4] = {0, 0, 0, 0};
  BleuStats stats;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    stats.hypothesis_length += static_cast<Index>(hyp.size());
    stats.reference_length += static_cast<Index>(ref.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hc = count_ngrams(hyp, n);
      const auto rc = count_ngrams(ref, n);
      for (const auto& [gram, count] : hc) {
        auto it = rc.find(gram);
        matched[n - 1] += it == rc.end() ? 0 : std::min(count, it->second);
        total[n - 1] += count;
      }
    }
  }
  // Orders for which the whole hypothesis corpus has no n-gram at all are
  // left out of the geometric mean.
  double log_sum = 0;
  int orders = 0;
  bool zero = false;
  for (int n = 0; n < 4; ++n) {
    if (total[n] == 0) continue;
    stats.precisions[n] = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    ++orders;
    if (matched[n] == 0) {
      zero = true;
    } else {
      log_sum += std::log(stats.precisions[n]);
    }
  }
  const double c = static_cast<double>(stats.hypothesis_length);
  const double r = static_cast<double>(stats.reference_length);
  stats.brevity_penalty = c == 0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));
  stats.bleu = (zero || orders == 0) ? 0.0
                                     : 100.0 * stats.brevity_penalty * std::exp(log_sum / orders);
  return stats;
}

double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references) {
  return bleu_stats(hypotheses, references).bleu;
}

}  // namespace seqmt
