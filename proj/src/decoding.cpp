#include "seqmt/decoding.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace seqmt {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam size must be at least 1, got " + std::to_string(beam_size));
  if (!(length_penalty >= 0)) throw ConfigError("length penalty must be non-negative");
  if (!(max_len_factor >= 0) || max_len_offset < 0) throw ConfigError("max length settings must be non-negative");
  if (max_len_factor == 0 && max_len_offset == 0) throw ConfigError("max output length would be zero");
  if (nbest < 1) throw ConfigError("n-best size must be at least 1");
}

Index DecodeConfig::max_length(Index source_length) const {
  return static_cast<Index>(std::floor(max_len_factor * static_cast<double>(source_length))) +
         max_len_offset;
}

double length_penalty(Index length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

namespace {

struct Live {
  Sentence tokens;
  double log_prob = 0;
};

struct Candidate {
  double log_prob;
  Index beam;
  TokenId token;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.beam != b.beam) return a.beam < b.beam;
  return a.token < b.token;
}

template <typename S>
EncodedSource<S> encode_sentence(const ModelParams<S>& params, const Sentence& source) {
  if (source.empty()) throw ConfigError("cannot translate an empty source sentence");
  const auto len = static_cast<Index>(source.size());
  IdMatrix ids(len, 1);
  for (Index t = 0; t < len; ++t) {
    const TokenId id = source[static_cast<std::size_t>(t)];
    if (id < 0 || id >= params.config().vocab_size) {
      throw IndexError("source token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(params.config().vocab_size));
    }
    ids(t, 0) = id;
  }
  MaskMatrix mask = MaskMatrix::Ones(len, 1);
  return encode(params, ids, mask);
}

Hypothesis finish(Sentence tokens, double log_prob, double alpha, bool finished) {
  Hypothesis h;
  h.score = log_prob / length_penalty(static_cast<Index>(tokens.size()), alpha);
  h.tokens = std::move(tokens);
  h.log_prob = log_prob;
  h.finished = finished;
  return h;
}

}  // namespace

template <typename S>
Translation beam_search(const ModelParams<S>& params, const Sentence& source, const DecodeConfig& cfg) {
  cfg.validate();
  const EncodedSource<S> encoded = encode_sentence(params, source);
  const Index max_len = cfg.max_length(static_cast<Index>(source.size()));
  const double alpha = cfg.length_penalty;
  const Index vocab = params.config().vocab_size;

  std::map<Index, EncodedSource<S>> replicas;
  auto replica = [&](Index k) -> const EncodedSource<S>& {
    auto it = replicas.find(k);
    if (it == replicas.end()) it = replicas.emplace(k, encoded.repeat(k)).first;
    return it->second;
  };

  std::vector<Live> live(1);
  DecoderState<S> state = initial_decoder_state(encoded);
  std::vector<Hypothesis> finished;
  // finished is kept sorted best first; ties keep discovery order
  auto add_finished = [&](Hypothesis h) {
    auto pos = std::upper_bound(finished.begin(), finished.end(), h,
                                [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
    finished.insert(pos, std::move(h));
  };

  std::vector<Candidate> cands;
  for (Index step = 1; step <= max_len && !live.empty(); ++step) {
    const auto k = static_cast<Index>(live.size());
    std::vector<TokenId> prev(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) {
      const auto& t = live[static_cast<std::size_t>(i)].tokens;
      prev[static_cast<std::size_t>(i)] = t.empty() ? kBos : t.back();
    }
    const Matrix<S> logp = decode_step(params, prev, state, replica(k));

    cands.clear();
    cands.reserve(static_cast<std::size_t>(k * vocab));
    for (Index i = 0; i < k; ++i) {
      const double base = live[static_cast<std::size_t>(i)].log_prob;
      for (Index v = 0; v < vocab; ++v) {
        cands.push_back({base + static_cast<double>(logp(v, i)), i, static_cast<TokenId>(v)});
      }
    }
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(cfg.beam_size), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);

    std::vector<Live> next;
    std::vector<Index> columns;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = cands[c];
      Sentence tokens = live[static_cast<std::size_t>(cand.beam)].tokens;
      tokens.push_back(cand.token);
      if (cand.token == kEos) {
        add_finished(finish(std::move(tokens), cand.log_prob, alpha, true));
      } else if (step < max_len) {
        next.push_back({std::move(tokens), cand.log_prob});
        columns.push_back(cand.beam);
      } else {
        next.push_back({std::move(tokens), cand.log_prob});
      }
    }
    live = std::move(next);
    if (step == max_len || live.empty()) break;
    state = select_columns(state, columns);

    // Log probabilities only fall as tokens are added and the penalty
    // grows with length, so no extension of a live hypothesis can score
    // above best_live / lp(max_len).
    if (static_cast<Index>(finished.size()) >= cfg.beam_size) {
      const double bound = live.front().log_prob / length_penalty(max_len, alpha);
      if (bound <= finished.front().score) {
        live.clear();
        break;
      }
    }
  }

  Translation out;
  if (finished.empty()) {
    out.truncated = true;
    for (auto& l : live) add_finished(finish(std::move(l.tokens), l.log_prob, alpha, false));
  }
  const Hypothesis& best = finished.front();
  out.tokens = best.tokens;
  if (best.finished) out.tokens.pop_back();
  out.log_prob = best.log_prob;
  out.score = best.score;
  const auto n = std::min(finished.size(), static_cast<std::size_t>(cfg.nbest));
  out.nbest.assign(finished.begin(), finished.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

template <typename S>
Translation greedy_decode(const ModelParams<S>& params, const Sentence& source, Index max_len) {
  if (max_len < 1) throw ConfigError("max length must be at least 1");
  const EncodedSource<S> encoded = encode_sentence(params, source);
  DecoderState<S> state = initial_decoder_state(encoded);
  Sentence tokens;
  double log_prob = 0;
  bool done = false;
  while (static_cast<Index>(tokens.size()) < max_len) {
    const Matrix<S> logp =
        decode_step(params, std::vector<TokenId>{tokens.empty() ? kBos : tokens.back()}, state, encoded);
    // ranked on the accumulated score, exactly as a width-1 beam would
    Index arg = 0;
    double best = log_prob + static_cast<double>(logp(0, 0));
    for (Index v = 1; v < logp.rows(); ++v) {
      const double cand = log_prob + static_cast<double>(logp(v, 0));
      if (cand > best) {
        best = cand;
        arg = v;
      }
    }
    log_prob = best;
    tokens.push_back(static_cast<TokenId>(arg));
    if (arg == kEos) {
      done = true;
      break;
    }
  }
  Translation out;
  Hypothesis h = finish(tokens, log_prob, 0.0, done);
  out.truncated = !done;
  out.log_prob = log_prob;
  out.score = log_prob;
  out.tokens = std::move(tokens);
  if (done) out.tokens.pop_back();
  out.nbest.push_back(std::move(h));
  return out;
}

template <typename S>
std::vector<TranslatedLine> translate_lines(const Model<S>& model, const std::vector<std::string>& lines,
                                            const TranslateOptions& options) {
  options.decode.validate();
  std::vector<TranslatedLine> out(lines.size());
  std::vector<Sentence> sources(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) sources[i] = model.vocab.encode_line(lines[i]);

  std::vector<std::size_t> order(lines.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sources[a].size() > sources[b].size();
  });

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= order.size()) return;
      const std::size_t i = order[slot];
      if (sources[i].empty()) continue;
      try {
        Translation t = options.greedy
                            ? greedy_decode(*model.params, sources[i],
                                            options.decode.max_length(static_cast<Index>(sources[i].size())))
                            : beam_search(*model.params, sources[i], options.decode);
        out[i].text = model.vocab.decode_line(t.tokens);
        out[i].translation = std::move(t);
      } catch (const Error& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) {
          failure = std::make_exception_ptr(
              std::runtime_error("line " + std::to_string(i + 1) + ": " + e.what()));
        }
        next = order.size();
        return;
      }
    }
  };
  const int threads = std::max(1, options.threads);
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::string format_nbest(std::size_t index, const Translation& t, const Vocabulary& vocab) {
  std::ostringstream os;
  os.precision(6);
  os.setf(std::ios::fixed);
  for (const auto& h : t.nbest) {
    Sentence tokens = h.tokens;
    if (h.finished && !tokens.empty()) tokens.pop_back();
    os << index << " ||| " << vocab.decode_line(tokens) << " ||| " << h.score << '\n';
  }
  return os.str();
}

#define SEQMT_INSTANTIATE_DECODING(S)                                                             \
  template Translation beam_search<S>(const ModelParams<S>&, const Sentence&, const DecodeConfig&); \
  template Translation greedy_decode<S>(const ModelParams<S>&, const Sentence&, Index);            \
  template std::vector<TranslatedLine> translate_lines<S>(const Model<S>&,                        \
                                                          const std::vector<std::string>&,        \
                                                          const TranslateOptions&);

SEQMT_INSTANTIATE_DECODING(float)
SEQMT_INSTANTIATE_DECODING(double)

}  // namespace seqmt
