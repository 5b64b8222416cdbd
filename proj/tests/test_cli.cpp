#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "seqmt/cli.hpp"

using namespace seqmt;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path / name) << text;
    return (path / name).string();
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

/// Numeric default shown in brackets on the help line of `flag`.
double help_default(const std::string& help, const std::string& flag) {
  std::istringstream lines(help);
  std::string line;
  while (std::getline(lines, line)) {
    const auto at = line.find(flag + " ");
    if (at == std::string::npos) continue;
    const auto open = line.rfind('[');
    const auto close = line.find(']', open);
    REQUIRE(open != std::string::npos);
    return std::stod(line.substr(open + 1, close - open - 1));
  }
  FAIL("flag ", flag, " missing from help");
  return 0;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool single_line_error(const std::string& err) {
  return err.rfind("seqmt: error: ", 0) == 0 && std::count(err.begin(), err.end(), '\n') == 1;
}

/// Copy task corpus over a handful of symbols.
void write_copy_corpus(const TempDir& dir, int pairs, std::uint64_t seed) {
  Rng rng(seed);
  std::ofstream src(dir / "train.src"), tgt(dir / "train.tgt"), dsrc(dir / "dev.src"), dtgt(dir / "dev.tgt");
  const char* words[] = {"a", "b", "c", "d", "e"};
  for (int i = 0; i < pairs + 6; ++i) {
    std::string line;
    const auto len = 2 + rng.below(3);
    for (std::uint64_t j = 0; j < len; ++j) line += std::string(j ? " " : "") + words[rng.below(5)];
    (i < pairs ? src : dsrc) << line << '\n';
    (i < pairs ? tgt : dtgt) << line << '\n';
  }
}

std::vector<std::string> tiny_train_args(const TempDir& dir, const std::string& model) {
  return {"train", "--train-src", dir / "train.src", "--train-tgt", dir / "train.tgt", "--dev-src",
          dir / "dev.src", "--dev-tgt", dir / "dev.tgt", "--vocab", dir / "vocab.txt", "--model", model,
          "--embedding-size", "8", "--hidden-size", "8", "--batch-size", "4", "--eval-interval", "16",
          "--max-epochs", "2", "--seed", "3"};
}

}  // namespace

TEST_CASE("train help shows the published defaults") {
  const Run r = cli({"train", "--help"});
  CHECK(r.code == 0);
  CHECK(help_default(r.out, "--embedding-size") == 512);
  CHECK(help_default(r.out, "--hidden-size") == 512);
  CHECK(help_default(r.out, "--depth") == 2);
  CHECK(help_default(r.out, "--dropout") == 0.2);
  CHECK(help_default(r.out, "--label-smoothing") == 0.1);
  CHECK(help_default(r.out, "--lr") == 1.0);
  CHECK(help_default(r.out, "--lr-decay") == 0.7);
  CHECK(help_default(r.out, "--patience") == 12);
  CHECK(help_default(r.out, "--max-bad-decays") == 2);
  CHECK(help_default(r.out, "--eval-interval") == 400000);
  CHECK(help_default(r.out, "--clip-norm") == 5);
  CHECK(help_default(r.out, "--batch-size") == 64);
  CHECK(help_default(r.out, "--max-len") == 100);
  for (const char* flag : {"--train-src", "--train-tgt", "--dev-src", "--dev-tgt", "--vocab", "--model", "--seed"}) {
    CHECK(r.out.find(flag) != std::string::npos);
  }
}

TEST_CASE("translate help shows the published decoding defaults") {
  const Run r = cli({"translate", "--help"});
  CHECK(r.code == 0);
  CHECK(help_default(r.out, "--beam-size") == 10);
  CHECK(help_default(r.out, "--length-penalty") == 0.6);
}

TEST_CASE("usage errors") {
  const Run none = cli({});
  CHECK(none.code == kExitUsage);
  CHECK(single_line_error(none.err));
  const Run unknown = cli({"score", "--hyp", "x", "--ref", "y", "--bogus"});
  CHECK(unknown.code == kExitUsage);
  CHECK(single_line_error(unknown.err));
  const Run bad_value = cli({"translate", "--model", "m", "--beam-size", "ten"});
  CHECK(bad_value.code == kExitUsage);
}

TEST_CASE("score") {
  TempDir dir("seqmt_test_cli_score");
  const auto ref = dir.write("ref.txt", "the cat sat on the mat\nhello world again and again\n");
  const Run same = cli({"score", "--hyp", ref, "--ref", ref});
  CHECK(same.code == 0);
  CHECK(same.out == "100.00\n");

  const auto hyp = dir.write("hyp.txt", "a b c d e\n");
  const auto longref = dir.write("long.txt", "a b c d e f g h i j\n");
  const Run brevity = cli({"score", "--hyp", hyp, "--ref", longref});
  CHECK(brevity.out == "36.79\n");

  const Run missing = cli({"score", "--hyp", hyp, "--ref", dir / "absent.txt"});
  CHECK(missing.code != 0);
  CHECK(missing.err.find("absent.txt") != std::string::npos);
  CHECK(single_line_error(missing.err));

  const Run mismatch = cli({"score", "--hyp", hyp, "--ref", ref});
  CHECK(mismatch.code == kExitUsage);
  CHECK(single_line_error(mismatch.err));
}

TEST_CASE("build-vocab") {
  TempDir dir("seqmt_test_cli_vocab");
  const auto a = dir.write("a.txt", "x y y\n");
  const Run r = cli({"build-vocab", "--input", a, "--output", dir / "v.txt", "--cap", "5"});
  CHECK(r.code == 0);
  CHECK(slurp(dir / "v.txt") == "<pad>\n<unk>\n<s>\n</s>\ny\n");
}

TEST_CASE("train, translate and determinism on a tiny corpus") {
  TempDir dir("seqmt_test_cli_train");
  write_copy_corpus(dir, 24, 5);
  REQUIRE(cli({"build-vocab", "--input", dir / "train.src", "--input", dir / "train.tgt", "--output",
               dir / "vocab.txt"}).code == 0);

  const Run a = cli(tiny_train_args(dir, dir / "a.bin"));
  INFO(a.err);
  REQUIRE(a.code == 0);
  CHECK(a.out.find("best dev entropy") != std::string::npos);
  CHECK(a.err.find("src_tok_per_sec") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "a.bin.log"));
  const Run b = cli(tiny_train_args(dir, dir / "b.bin"));
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));

  SUBCASE("translate writes one line per input line") {
    const auto input = dir.write("in.txt", "a b\n\nc d e\n");
    const Run t = cli({"translate", "--model", dir / "a.bin", "--input", input, "--output", dir / "out.txt",
                       "--vocab", dir / "vocab.txt", "--nbest", "2", "--nbest-output", dir / "nbest.txt"});
    INFO(t.err);
    CHECK(t.code == 0);
    const auto text = slurp(dir / "out.txt");
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
    CHECK(t.err.find("source tokens/s") != std::string::npos);
    CHECK(slurp(dir / "nbest.txt").find(" ||| ") != std::string::npos);

    const Run greedy = cli({"translate", "--model", dir / "a.bin", "--input", input, "--greedy"});
    const Run beam1 = cli({"translate", "--model", dir / "a.bin", "--input", input, "--beam-size", "1"});
    CHECK(greedy.out == beam1.out);
  }
  SUBCASE("empty input gives empty output") {
    const auto empty = dir.write("empty.txt", "");
    const Run t = cli({"translate", "--model", dir / "a.bin", "--input", empty});
    CHECK(t.code == 0);
    CHECK(t.out.empty());
  }
  SUBCASE("vocabulary mismatch names both sizes") {
    const auto other = dir.write("other.txt", "<pad>\n<unk>\n<s>\n</s>\nq\n");
    const Run t = cli({"translate", "--model", dir / "a.bin", "--vocab", other, "--input", dir / "dev.src"});
    CHECK(t.code == kExitUsage);
    CHECK(t.err.find("5") != std::string::npos);
    CHECK(t.err.find("9") != std::string::npos);
    CHECK(single_line_error(t.err));
  }
  SUBCASE("missing corpus") {
    auto args = tiny_train_args(dir, dir / "c.bin");
    args[2] = dir / "nothing.src";
    const Run t = cli(args);
    CHECK(t.code == kExitUsage);
    CHECK(t.err.find("nothing.src") != std::string::npos);
  }
  SUBCASE("config file supplies values, flags override it") {
    const auto ini = dir.write("train.ini", "[train]\nembedding-size=8\nhidden-size=8\nbatch-size=4\nmax-epochs=2\nseed=3\n"
                                           "eval-interval=16\n");
    std::vector<std::string> args{"--config", ini, "train", "--train-src", dir / "train.src", "--train-tgt",
                                  dir / "train.tgt", "--dev-src", dir / "dev.src", "--dev-tgt", dir / "dev.tgt",
                                  "--vocab", dir / "vocab.txt", "--model", dir / "c.bin"};
    REQUIRE(cli(args).code == 0);
    CHECK(slurp(dir / "c.bin") == slurp(dir / "a.bin"));
    args.insert(args.end(), {"--seed", "4"});
    args[args.size() - 3] = dir / "d.bin";
    REQUIRE(cli(args).code == 0);
    CHECK(slurp(dir / "d.bin") != slurp(dir / "a.bin"));
  }
}
