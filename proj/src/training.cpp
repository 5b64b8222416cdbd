#include "seqmt/training.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

namespace seqmt {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (!(decay_factor > 0 && decay_factor < 1)) {
    throw ConfigError("learning rate decay must lie in (0, 1), got " + std::to_string(decay_factor));
  }
  if (!(label_smoothing >= 0 && label_smoothing < 1)) {
    throw ConfigError("label smoothing must lie in [0, 1), got " + std::to_string(label_smoothing));
  }
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (eval_interval_sentences < 1) throw ConfigError("eval interval must be at least 1 sentence");
  if (max_bad_decays < 1) throw ConfigError("max bad decays must be at least 1");
  if (grad_clip_norm && !(*grad_clip_norm > 0)) throw ConfigError("clip norm must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (max_len < 1) throw ConfigError("max length must be at least 1");
  if (max_epochs < 0 || max_seconds < 0) throw ConfigError("limits must be non-negative");
}

template <typename S>
LossResult smoothed_loss(const Matrix<S>& logits, std::span<const TokenId> targets,
                         std::span<const std::uint8_t> mask, double epsilon, Matrix<S>* grad) {
  if (!(epsilon >= 0 && epsilon < 1)) {
    throw ConfigError("label smoothing must lie in [0, 1), got " + std::to_string(epsilon));
  }
  const Index vocab = logits.rows();
  const Index cols = logits.cols();
  if (static_cast<Index>(targets.size()) != cols || static_cast<Index>(mask.size()) != cols) {
    throw ShapeError("smoothed_loss: logits " + to_string(shape_of(logits)) + " with " +
                     std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                     " mask entries");
  }
  const Matrix<S> logp = log_softmax_columns<S>(logits);
  const double off = epsilon / static_cast<double>(vocab);
  const double on = 1.0 - epsilon + off;

  LossResult r;
  for (Index c = 0; c < cols; ++c) {
    if (!mask[static_cast<std::size_t>(c)]) continue;
    const TokenId y = targets[static_cast<std::size_t>(c)];
    if (y < 0 || y >= vocab) {
      throw IndexError("smoothed_loss: target " + std::to_string(y) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    // shifted logits z, loss = lse(z) - (1-eps) z_y - eps mean(z)
    const double top = static_cast<double>(logits.col(c).maxCoeff());
    double sum_exp = 0, sum_z = 0;
    for (Index v = 0; v < vocab; ++v) {
      const double z = static_cast<double>(logits(v, c)) - top;
      sum_exp += std::exp(z);
      sum_z += z;
    }
    const double zy = static_cast<double>(logits(y, c)) - top;
    r.total += std::log(sum_exp) - ((1.0 - epsilon) * zy + off * sum_z);
    ++r.tokens;
  }
  if (!std::isfinite(r.total)) throw NumericError("smoothed_loss: non-finite loss");
  r.loss = r.tokens > 0 ? r.total / static_cast<double>(r.tokens) : 0.0;

  if (grad != nullptr) {
    grad->setZero(vocab, cols);
    if (r.tokens > 0) {
      const double scale = 1.0 / static_cast<double>(r.tokens);
      for (Index c = 0; c < cols; ++c) {
        if (!mask[static_cast<std::size_t>(c)]) continue;
        const TokenId y = targets[static_cast<std::size_t>(c)];
        for (Index v = 0; v < vocab; ++v) {
          const double p = std::exp(static_cast<double>(logp(v, c)));
          const double q = v == y ? on : off;
          (*grad)(v, c) = static_cast<S>((p - q) * scale);
        }
      }
    }
  }
  return r;
}

template <typename S>
double grad_norm(std::span<ParamBlock<S>* const> blocks) {
  double sq = 0;
  for (const auto* p : blocks) {
    if (!p->learnable) continue;
    const auto& g = p->weight.grad;
    for (Index i = 0; i < g.size(); ++i) {
      const double v = static_cast<double>(g.data()[i]);
      sq += v * v;
    }
  }
  return std::sqrt(sq);
}

template <typename S>
double sgd_step(std::span<ParamBlock<S>* const> blocks, double lr, std::optional<double> clip_norm) {
  const double norm = grad_norm(blocks);
  if (!std::isfinite(norm)) throw NumericError("sgd_step: non-finite gradient");
  double scale = lr;
  if (clip_norm && norm > *clip_norm) scale *= *clip_norm / norm;
  const S step = static_cast<S>(scale);
  for (auto* p : blocks) {
    if (p->learnable) p->weight.data -= step * p->weight.grad;
    p->weight.grad.setZero();
  }
  return norm;
}

double improvement_threshold(double lr) { return std::max(0.01 * lr, 0.001); }

std::string_view to_string(ScheduleAction action) {
  switch (action) {
    case ScheduleAction::kContinue: return "continue";
    case ScheduleAction::kDecayRestart: return "decay-restart";
    case ScheduleAction::kTerminate: return "terminate";
  }
  return "?";
}

ScheduleState initial_schedule(const TrainConfig& cfg) {
  ScheduleState s;
  s.lr = cfg.learning_rate;
  return s;
}

ScheduleStep schedule_on_eval(const ScheduleState& state, double dev_entropy, const TrainConfig& cfg) {
  if (!std::isfinite(dev_entropy)) throw NumericError("dev entropy is not finite");
  ScheduleStep out{state, ScheduleAction::kContinue, false};
  ScheduleState& s = out.state;
  if (dev_entropy < state.best_dev_entropy - improvement_threshold(state.lr)) {
    s.best_dev_entropy = dev_entropy;
    s.bad_count = 0;
    s.improved_since_decay = true;
    s.decays_without_improvement = 0;
    out.improved = true;
    return out;
  }
  if (++s.bad_count < cfg.patience) return out;

  s.bad_count = 0;
  if (!s.improved_since_decay) ++s.decays_without_improvement;
  if (s.decays_without_improvement >= cfg.max_bad_decays) {
    out.action = ScheduleAction::kTerminate;
    return out;
  }
  s.lr *= cfg.decay_factor;
  ++s.decays;
  s.improved_since_decay = false;
  out.action = ScheduleAction::kDecayRestart;
  return out;
}

template <typename S>
double dev_entropy(const ModelParams<S>& params, const ParallelCorpus& dev, Index batch_size) {
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    if (!dev.source[i].empty()) usable.push_back(i);
  }
  if (usable.empty()) throw ConfigError("dev set is empty");
  const auto bs = static_cast<std::size_t>(std::max<Index>(batch_size, 1));
  double total = 0;
  Index tokens = 0;
  for (std::size_t start = 0; start < usable.size(); start += bs) {
    const std::vector<std::size_t> idx(usable.begin() + static_cast<std::ptrdiff_t>(start),
                                       usable.begin() + static_cast<std::ptrdiff_t>(
                                                            std::min(usable.size(), start + bs)));
    const Batch batch = make_batch(dev, idx);
    for (double lp : sequence_log_prob(params, batch)) total -= lp;
    tokens += batch.target_tokens();
  }
  return total / static_cast<double>(tokens);
}

void write_log_header(std::ostream& out) {
  out << "step\tepoch\tlr\ttrain_loss\tdev_entropy\taction\tsrc_tok_per_sec\n";
}

void write_log_row(std::ostream& out, const TrainLogRow& row) {
  const auto flags = out.flags();
  out << row.step << '\t';
  out.setf(std::ios::fixed);
  out.precision(4);
  out << row.epoch << '\t';
  out.unsetf(std::ios::fixed);
  out.precision(8);
  out << row.lr << '\t';
  out.setf(std::ios::fixed);
  out.precision(6);
  out << row.train_loss << '\t' << row.dev_entropy << '\t' << to_string(row.action) << '\t';
  out.precision(1);
  out << row.source_tokens_per_second << '\n';
  out.flush();
  out.flags(flags);
}

template <typename S>
LossResult train_step(ModelParams<S>& params, const Batch& batch, double lr, const TrainConfig& cfg,
                      Rng& rng) {
  Seq2SeqGraph<S> graph;
  graph.init(params, batch, RunMode::kTrain, &rng);
  Variable<S>& logits = graph.run_forward();

  const Index len = batch.target.rows();
  const Index n = batch.size();
  std::vector<TokenId> targets(static_cast<std::size_t>(len * n));
  std::vector<std::uint8_t> mask(targets.size());
  for (Index j = 0; j < len; ++j) {
    for (Index b = 0; b < n; ++b) {
      targets[static_cast<std::size_t>(j * n + b)] = batch.target(j, b);
      mask[static_cast<std::size_t>(j * n + b)] = batch.target_mask(j, b);
    }
  }
  const LossResult loss = smoothed_loss<S>(logits.data, targets, mask, cfg.label_smoothing, &logits.grad);
  graph.run_backward();
  sgd_step<S>(params.blocks(), lr, cfg.grad_clip_norm);
  return loss;
}

namespace {

std::uint64_t dropout_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ULL + 0x2545F4914F6CDD1DULL; }

}  // namespace

template <typename S>
TrainResult train(ModelParams<S>& params, const ParallelCorpus& train_corpus,
                  const ParallelCorpus& dev_corpus, const TrainConfig& cfg,
                  const TrainOutputs& outputs) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - started).count(); };

  Rng data_rng(cfg.seed);
  Rng drop_rng(dropout_seed(cfg.seed));
  const bool files = !outputs.checkpoint.empty();
  if (files && outputs.vocab == nullptr) throw ConfigError("train: checkpoint path without vocabulary");

  TrainResult result;
  result.schedule = initial_schedule(cfg);
  std::vector<Matrix<S>> best = params.snapshot();
  if (outputs.log != nullptr) write_log_header(*outputs.log);

  double loss_total = 0;
  Index loss_tokens = 0;
  Index src_tokens = 0;
  double interval_start = 0;
  std::int64_t since_eval = 0;
  bool stop = false;

  auto evaluate = [&](double epoch) {
    TrainLogRow row;
    row.step = result.steps;
    row.epoch = epoch;
    row.lr = result.schedule.lr;
    row.train_loss = loss_tokens > 0 ? loss_total / static_cast<double>(loss_tokens) : 0.0;
    const double now = elapsed();
    row.source_tokens_per_second =
        now > interval_start ? static_cast<double>(src_tokens) / (now - interval_start) : 0.0;
    row.dev_entropy = dev_entropy(params, dev_corpus, cfg.batch_size);

    const ScheduleStep next = schedule_on_eval(result.schedule, row.dev_entropy, cfg);
    row.action = next.action;
    if (next.improved) {
      best = params.snapshot();
      if (files) save_checkpoint(outputs.checkpoint, params.config(), *outputs.vocab, params);
    }
    if (next.action == ScheduleAction::kDecayRestart) {
      if (files && std::filesystem::exists(outputs.checkpoint)) {
        auto archive = outputs.checkpoint;
        archive += ".decay" + std::to_string(next.state.decays);
        std::filesystem::copy_file(outputs.checkpoint, archive,
                                   std::filesystem::copy_options::overwrite_existing);
      }
      params.restore(best);
    }
    if (next.action == ScheduleAction::kTerminate) {
      result.terminated = true;
      stop = true;
    }
    result.schedule = next.state;
    result.log.push_back(row);
    if (outputs.log != nullptr) write_log_row(*outputs.log, row);
    if (outputs.on_eval) outputs.on_eval(row);

    loss_total = 0;
    loss_tokens = 0;
    src_tokens = 0;
    since_eval = 0;
    interval_start = elapsed();
  };

  const double corpus_size = static_cast<double>(train_corpus.size());
  std::int64_t sentences = 0;
  for (Index epoch = 0; !stop && (cfg.max_epochs == 0 || epoch < cfg.max_epochs); ++epoch) {
    const std::vector<Batch> batches = make_batches(train_corpus, cfg.batch_size, cfg.max_len, data_rng);
    for (const Batch& batch : batches) {
      const LossResult loss = train_step(params, batch, result.schedule.lr, cfg, drop_rng);
      ++result.steps;
      sentences += batch.size();
      loss_total += loss.total;
      loss_tokens += loss.tokens;
      src_tokens += batch.source_tokens();
      since_eval += batch.size();
      result.epochs = static_cast<double>(sentences) / corpus_size;
      if (since_eval >= cfg.eval_interval_sentences) evaluate(result.epochs);
      if (stop) break;
      if (cfg.max_seconds > 0 && elapsed() >= cfg.max_seconds) {
        stop = true;
        break;
      }
    }
  }
  if (!result.terminated && since_eval > 0) evaluate(result.epochs);
  params.restore(best);
  return result;
}

#define SEQMT_INSTANTIATE_TRAINING(S)                                                              \
  template LossResult smoothed_loss<S>(const Matrix<S>&, std::span<const TokenId>,                 \
                                       std::span<const std::uint8_t>, double, Matrix<S>*);         \
  template double grad_norm<S>(std::span<ParamBlock<S>* const>);                                   \
  template double sgd_step<S>(std::span<ParamBlock<S>* const>, double, std::optional<double>);     \
  template double dev_entropy<S>(const ModelParams<S>&, const ParallelCorpus&, Index);             \
  template LossResult train_step<S>(ModelParams<S>&, const Batch&, double, const TrainConfig&,     \
                                    Rng&);                                                         \
  template TrainResult train<S>(ModelParams<S>&, const ParallelCorpus&, const ParallelCorpus&,     \
                                const TrainConfig&, const TrainOutputs&);

SEQMT_INSTANTIATE_TRAINING(float)
SEQMT_INSTANTIATE_TRAINING(double)

}  // namespace seqmt
