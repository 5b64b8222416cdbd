#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "seqmt/decoding.hpp"
#include "seqmt/training.hpp"

namespace seqmt {

enum class Command { kTrain, kTranslate, kScore, kBuildVocab };

struct CliConfig {
  Command command = Command::kTrain;
  std::filesystem::path train_src, train_tgt, dev_src, dev_tgt;
  std::filesystem::path vocab, model, input, output, log;
  std::filesystem::path hypotheses, references, nbest_output;
  std::vector<std::filesystem::path> vocab_inputs;
  Index vocab_cap = 37000;
  double init_scale = 0.1;
  /// 0 means one worker per hardware thread.
  int threads = 1;
  bool greedy = false;
  ModelConfig model_config;
  TrainConfig train_config;
  DecodeConfig decode_config;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Parses argv and runs the selected command. Results go to `out`, progress
/// and single-line diagnostics to `err`. Returns the process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_train(const CliConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_translate(const CliConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_score(const CliConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_build_vocab(const CliConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace seqmt
