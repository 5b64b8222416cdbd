#include "seqmt/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

namespace seqmt {

namespace {

void add_model_options(CLI::App& app, CliConfig& c) {
  auto& m = c.model_config;
  app.add_option("--embedding-size", m.embedding_size, "Embedding size")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--hidden-size", m.hidden_size, "LSTM hidden size")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--depth", m.depth, "Encoder/decoder depth")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--dropout", m.dropout, "Dropout rate")->capture_default_str()->check(CLI::Range(0.0, 0.999999));
  app.add_flag_callback("--no-output-tanh", [&m] { m.output_tanh = false; }, "Drop the tanh before the output softmax");
  app.add_flag("--shared-embeddings", m.shared_embeddings, "One embedding table for source and target");
}

void add_train_options(CLI::App& app, CliConfig& c) {
  auto& t = c.train_config;
  app.add_option("--train-src", c.train_src, "Training source file")->required();
  app.add_option("--train-tgt", c.train_tgt, "Training target file")->required();
  app.add_option("--dev-src", c.dev_src, "Development source file")->required();
  app.add_option("--dev-tgt", c.dev_tgt, "Development target file")->required();
  app.add_option("--vocab", c.vocab, "Vocabulary file")->required();
  app.add_option("--model", c.model, "Best checkpoint path")->required();
  app.add_option("--log", c.log, "Tab-separated training log (default: <model>.log)");
  add_model_options(app, c);
  app.add_option("--lr", t.learning_rate, "Learning rate")->capture_default_str();
  app.add_option("--lr-decay", t.decay_factor, "Learning rate decay factor")->capture_default_str();
  app.add_option("--label-smoothing", t.label_smoothing, "Label smoothing")->capture_default_str();
  app.add_option("--patience", t.patience, "Non-improving evaluations before a decay")->capture_default_str();
  app.add_option("--max-bad-decays", t.max_bad_decays, "Decays without improvement before stopping")
      ->capture_default_str();
  app.add_option("--eval-interval", t.eval_interval_sentences, "Sentence pairs between evaluations")
      ->capture_default_str();
  app.add_option("--batch-size", t.batch_size, "Sentences per batch")->capture_default_str();
  app.add_option("--max-len", t.max_len, "Longest training sentence kept")->capture_default_str();
  app.add_option("--seed", t.seed, "Random seed")->capture_default_str();
  app.add_option_function<double>(
         "--clip-norm",
         [&t](double v) { t.grad_clip_norm = v > 0 ? std::optional<double>(v) : std::nullopt; },
         "Global gradient norm clip, 0 disables")
      ->default_str("5");
  app.add_option("--max-epochs", t.max_epochs, "Stop after this many epochs, 0 for no limit")
      ->capture_default_str();
  app.add_option("--max-seconds", t.max_seconds, "Stop after this many seconds, 0 for no limit")
      ->capture_default_str();
  app.add_option("--init-scale", c.init_scale, "Uniform initialization range")->capture_default_str();
}

void add_translate_options(CLI::App& app, CliConfig& c) {
  auto& d = c.decode_config;
  app.add_option("--model", c.model, "Checkpoint")->required();
  app.add_option("--vocab", c.vocab, "Vocabulary file, checked against the checkpoint");
  app.add_option("--input", c.input, "Tokenized input, one sentence per line ('-' for stdin)")
      ->capture_default_str();
  app.add_option("--output", c.output, "Translations ('-' for stdout)")->capture_default_str();
  app.add_option("--beam-size", d.beam_size, "Beam size")->capture_default_str();
  app.add_option("--length-penalty", d.length_penalty, "Length penalty alpha")->capture_default_str();
  app.add_option("--max-len-factor", d.max_len_factor, "Output length limit per source token")
      ->capture_default_str();
  app.add_option("--max-len-offset", d.max_len_offset, "Output length limit offset")->capture_default_str();
  app.add_option("--nbest", d.nbest, "Hypotheses written to --nbest-output")->capture_default_str();
  app.add_option("--nbest-output", c.nbest_output, "N-best list path");
  app.add_option("--threads", c.threads, "Worker threads, 0 for all cores")->capture_default_str();
  app.add_flag("--greedy", c.greedy, "Greedy decoding instead of beam search");
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

void fail(std::ostream& err, const std::string& message) {
  err << "seqmt: error: " << one_line(message) << '\n';
}

std::vector<std::string> read_input(const std::filesystem::path& path) {
  if (path.empty() || path == "-") {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(std::cin, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    return lines;
  }
  return read_lines(path);
}

}  // namespace

int cmd_train(const CliConfig& c, std::ostream& out, std::ostream& err) {
  const Vocabulary vocab = Vocabulary::load(c.vocab);
  const ParallelCorpus train_corpus = read_parallel(c.train_src, c.train_tgt, vocab);
  const ParallelCorpus dev_corpus = read_parallel(c.dev_src, c.dev_tgt, vocab);
  ModelConfig mc = c.model_config;
  mc.vocab_size = vocab.size();
  mc.validate();
  c.train_config.validate();

  ModelParams<float> params(mc);
  Rng init_rng(c.train_config.seed);
  params.init_uniform(init_rng, c.init_scale);

  std::filesystem::path log_path = c.log;
  if (log_path.empty()) {
    log_path = c.model;
    log_path += ".log";
  }
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot write log " + log_path.string());

  err << "training " << params.parameter_count() << " parameters on " << train_corpus.size()
      << " sentence pairs, vocabulary " << vocab.size() << '\n';
  write_log_header(err);
  TrainOutputs outputs;
  outputs.checkpoint = c.model;
  outputs.vocab = &vocab;
  outputs.log = &log;
  outputs.on_eval = [&err](const TrainLogRow& row) { write_log_row(err, row); };
  const TrainResult result = train(params, train_corpus, dev_corpus, c.train_config, outputs);
  save_checkpoint(c.model, mc, vocab, params);
  out << "best dev entropy " << std::fixed << std::setprecision(6) << result.schedule.best_dev_entropy
      << " after " << result.steps << " steps (" << (result.terminated ? "schedule finished" : "limit reached")
      << ")\n";
  return kExitOk;
}

int cmd_translate(const CliConfig& c, std::ostream& out, std::ostream& err) {
  c.decode_config.validate();
  Model<float> model = load_checkpoint<float>(c.model);
  if (!c.vocab.empty()) {
    const Vocabulary vocab = Vocabulary::load(c.vocab);
    if (vocab.size() != model.config.vocab_size) {
      throw ConfigError("vocabulary " + c.vocab.string() + " has " + std::to_string(vocab.size()) +
                        " entries but model " + c.model.string() + " expects " +
                        std::to_string(model.config.vocab_size));
    }
    if (!(vocab == model.vocab)) {
      throw ConfigError("vocabulary " + c.vocab.string() + " differs from the one stored in " +
                        c.model.string());
    }
  }
  const std::vector<std::string> lines = read_input(c.input);
  TranslateOptions options;
  options.decode = c.decode_config;
  options.greedy = c.greedy;
  options.threads = c.threads > 0 ? c.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  const auto started = std::chrono::steady_clock::now();
  const std::vector<TranslatedLine> results = translate_lines(model, lines, options);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::ofstream file;
  std::ostream* dest = &out;
  if (!c.output.empty() && c.output != "-") {
    file.open(c.output, std::ios::trunc);
    if (!file) throw IoError("cannot write " + c.output.string());
    dest = &file;
  }
  Index truncated = 0;
  Index source_tokens = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    *dest << results[i].text << '\n';
    if (results[i].translation.truncated) ++truncated;
    source_tokens += static_cast<Index>(tokenize(lines[i]).size());
  }
  dest->flush();
  if (!c.nbest_output.empty()) {
    std::ofstream nb(c.nbest_output, std::ios::trunc);
    if (!nb) throw IoError("cannot write " + c.nbest_output.string());
    for (std::size_t i = 0; i < results.size(); ++i) nb << format_nbest(i, results[i].translation, model.vocab);
  }
  err << "translated " << results.size() << " lines, " << source_tokens << " source tokens in " << std::fixed
      << std::setprecision(2) << seconds << " s ("
      << std::setprecision(1) << (seconds > 0 ? static_cast<double>(source_tokens) / seconds : 0.0)
      << " source tokens/s)";
  if (truncated > 0) err << ", " << truncated << " hit the length limit";
  err << '\n';
  return kExitOk;
}

int cmd_score(const CliConfig& c, std::ostream& out, std::ostream&) {
  const auto hyp = read_lines(c.hypotheses);
  const auto ref = read_lines(c.references);
  if (hyp.size() != ref.size()) {
    throw ConfigError(c.hypotheses.string() + " has " + std::to_string(hyp.size()) + " lines but " +
                      c.references.string() + " has " + std::to_string(ref.size()));
  }
  std::vector<std::vector<std::string>> h, r;
  for (const auto& l : hyp) h.push_back(tokenize(l));
  for (const auto& l : ref) r.push_back(tokenize(l));
  out << std::fixed << std::setprecision(2) << bleu(h, r) << '\n';
  return kExitOk;
}

int cmd_build_vocab(const CliConfig& c, std::ostream& out, std::ostream&) {
  const Vocabulary vocab = build_vocab(c.vocab_inputs, c.vocab_cap);
  vocab.save(c.output);
  out << vocab.size() << " entries written to " << c.output.string() << '\n';
  return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CliConfig c;
  c.input = "-";
  c.output = "-";
  CLI::App app{"Attention-based LSTM encoder-decoder translation toolkit", "seqmt"};
  app.set_config("--config", "", "INI/TOML file with option values");
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train a model until the learning-rate schedule stops");
  add_train_options(*train, c);
  auto* translate = app.add_subcommand("translate", "Translate tokenized text with a checkpoint");
  add_translate_options(*translate, c);
  auto* score = app.add_subcommand("score", "Corpus BLEU of hypotheses against references");
  score->add_option("--hyp", c.hypotheses, "Hypothesis file")->required();
  score->add_option("--ref", c.references, "Reference file")->required();
  auto* vocab = app.add_subcommand("build-vocab", "Joint vocabulary over tokenized files");
  vocab->add_option("--input", c.vocab_inputs, "Corpus files")->required();
  vocab->add_option("--output", c.output, "Vocabulary file")->required();
  vocab->add_option("--cap", c.vocab_cap, "Maximum size including reserved entries")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    fail(err, e.what());
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(c, out, err);
    if (translate->parsed()) return cmd_translate(c, out, err);
    if (score->parsed()) return cmd_score(c, out, err);
    if (vocab->parsed()) return cmd_build_vocab(c, out, err);
  } catch (const ConfigError& e) {
    fail(err, e.what());
    return kExitUsage;
  } catch (const IoError& e) {
    fail(err, e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fail(err, e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("seqmt");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace seqmt
