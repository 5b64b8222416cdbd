#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqmt/model.hpp"

namespace seqmt {

struct TrainConfig {
  double learning_rate = 1.0;
  double decay_factor = 0.7;
  double label_smoothing = 0.1;
  int patience = 12;
  /// Sentence pairs consumed between two dev evaluations.
  std::int64_t eval_interval_sentences = 400000;
  int max_bad_decays = 2;
  std::optional<double> grad_clip_norm = 5.0;
  Index batch_size = 64;
  Index max_len = 100;
  std::uint64_t seed = 1;
  /// Hard stops besides the schedule; 0 disables.
  Index max_epochs = 0;
  double max_seconds = 0;

  void validate() const;
};

/// Scalar loss over unmasked tokens together with the logits gradient.
struct LossResult {
  double loss = 0;  // mean per token
  double total = 0;
  Index tokens = 0;
};

/// Label-smoothed cross entropy of softmax(logits) against
/// q = (1 - epsilon) onehot + epsilon / V. Column c of `logits` is scored
/// against targets[c] when mask[c] is nonzero. If `grad` is given it is
/// overwritten with d(mean loss)/d(logits), zero on masked columns.
template <typename S>
LossResult smoothed_loss(const Matrix<S>& logits, std::span<const TokenId> targets,
                         std::span<const std::uint8_t> mask, double epsilon,
                         Matrix<S>* grad = nullptr);

/// Global gradient norm over the blocks, accumulated in double.
template <typename S>
double grad_norm(std::span<ParamBlock<S>* const> blocks);

/// Clips by global norm, applies w -= lr * grad and zeroes the gradients.
/// Returns the norm before clipping. A non-finite gradient raises
/// NumericError and leaves weights and gradients untouched.
template <typename S>
double sgd_step(std::span<ParamBlock<S>* const> blocks, double lr, std::optional<double> clip_norm);

double improvement_threshold(double lr);

enum class ScheduleAction { kContinue, kDecayRestart, kTerminate };
std::string_view to_string(ScheduleAction action);

struct ScheduleState {
  double lr = 1.0;
  double best_dev_entropy = std::numeric_limits<double>::infinity();
  int bad_count = 0;
  int decays = 0;
  int decays_without_improvement = 0;
  bool improved_since_decay = false;

  bool operator==(const ScheduleState&) const = default;
};

struct ScheduleStep {
  ScheduleState state;
  ScheduleAction action = ScheduleAction::kContinue;
  /// The evaluation set a new best; the caller snapshots the model.
  bool improved = false;
};

ScheduleState initial_schedule(const TrainConfig& cfg);

/// One evaluation of the decay / restart / stop schedule.
ScheduleStep schedule_on_eval(const ScheduleState& state, double dev_entropy, const TrainConfig& cfg);

/// Mean per-token natural-log cross entropy over the corpus in inference
/// mode, without smoothing.
template <typename S>
double dev_entropy(const ModelParams<S>& params, const ParallelCorpus& dev, Index batch_size = 64);

struct TrainLogRow {
  std::int64_t step = 0;
  double epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double dev_entropy = 0;
  ScheduleAction action = ScheduleAction::kContinue;
  double source_tokens_per_second = 0;
};

/// Header plus one tab-separated line per row.
void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const TrainLogRow& row);

struct TrainOutputs {
  /// Best model is written here after every improvement, and copied to
  /// `<path>.decay<k>` before the k-th decay. Empty disables files.
  std::filesystem::path checkpoint;
  const Vocabulary* vocab = nullptr;
  std::ostream* log = nullptr;
  std::function<void(const TrainLogRow&)> on_eval;
};

struct TrainResult {
  ScheduleState schedule;
  std::vector<TrainLogRow> log;
  std::int64_t steps = 0;
  double epochs = 0;
  bool terminated = false;  // stopped by the schedule rather than a limit
};

/// Trains `params` in place. On return they hold the best model seen.
template <typename S>
TrainResult train(ModelParams<S>& params, const ParallelCorpus& train_corpus,
                  const ParallelCorpus& dev_corpus, const TrainConfig& cfg,
                  const TrainOutputs& outputs = {});

/// One teacher-forced SGD step on a batch; returns the smoothed loss.
template <typename S>
LossResult train_step(ModelParams<S>& params, const Batch& batch, double lr,
                      const TrainConfig& cfg, Rng& rng);

}  // namespace seqmt
