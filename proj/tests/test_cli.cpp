#include <gtest/gtest.h>

#include "cli.hpp"
#include "test_support.hpp"

namespace fb = fused_beam;
using fb::testing::TempDir;
using fb::testing::read_file;
using fb::testing::write_file;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = fb::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string data(const std::string& name) { return (fb::testing::data_dir() / name).string(); }

}  // namespace

TEST(Cli, BuildTrieReportsCountsAndIsDeterministic) {
  TempDir tmp("cli_trie");
  const auto a = (tmp / "a.pta").string(), b = (tmp / "b.pta").string();
  auto r = run({"build-trie", "--word-vocab", data("words3.txt"), "--dict", data("dict.txt"), "--output", a});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "7 states, 3 words\n");
  r = run({"build-trie", "--vocab", data("words3.txt"), "--dict", data("dict.txt"), "-o", b});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(a), read_file(b));
  EXPECT_TRUE(fb::PrefixTreeAutomaton::load(std::filesystem::path(a)) ==
              fb::PrefixTreeAutomaton::build(std::vector<std::string>{"her", "here", "his"},
                                             fb::load_dictionary(data("dict.txt"))));
}

TEST(Cli, BuildTrieMissingVocabIsUsageError) {
  TempDir tmp("cli_missing");
  const auto r = run({"build-trie", "--word-vocab", (tmp / "none.txt").string(), "--dict", data("dict.txt"), "--output",
                      (tmp / "x.pta").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--word-vocab"), std::string::npos) << r.err;
}

TEST(Cli, UnknownFlagOrSubcommandIsUsageError) {
  EXPECT_EQ(run({"decode", "--no-such-flag"}).code, 2);
  EXPECT_EQ(run({"transmogrify"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"decode", "--lm", "neural"}).code, 2);
}

TEST(Cli, LmProbe) {
  const std::vector<std::string> common{"lm-probe", "--dict", data("dict.txt"), "--word-vocab", data("words3.txt"),
                                        "--arpa", data("uniform3.arpa")};
  auto with = [&](std::vector<std::string> extra) {
    auto args = common;
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  auto r = with({"--prefix", "h"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "e 0.6667, i 0.3333\n");
  r = with({});
  EXPECT_EQ(r.out, "h 1.0000\n");
  r = with({"--prefix", "her", "--history", "his"});
  EXPECT_EQ(r.out, "e 0.5000\nword-end 0.5000\n");
  r = with({"--prefix", "hx"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("OOV penalty"), std::string::npos) << r.out;
}

TEST(Cli, ScoreWerQuoteExample) {
  TempDir tmp("cli_wer");
  auto r = run({"score-wer", "--ref", data("quote_ref.txt"), "--hyp", data("quote_hyp.txt")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find("%WER")),
            "4k9c030b\n"
            "REF: \"QUOTE AN EYE FOR AN EYE \"UNQUOTE\n"
            "HYP: \"QUOTE AN EYE FOR    ANY \"END-QUOTE\n"
            "STP:                   D  S   S\n"
            "WER: 42.86%\n");

  r = run({"score-wer", "--ref", data("quote_ref.txt"), "--hyp", data("quote_ref.txt")});
  EXPECT_NE(r.out.find("WER: 0.00%"), std::string::npos);
  EXPECT_NE(r.out.find("%WER 0.00"), std::string::npos);
}

TEST(Cli, ScoreWerMissingHypothesisCountsAsDeletions) {
  TempDir tmp("cli_missing_hyp");
  write_file(tmp / "ref.txt", "a one two\nb three\n");
  write_file(tmp / "hyp.txt", "a one two\n");
  const auto r = run({"score-wer", "--ref", (tmp / "ref.txt").string(), "--hyp", (tmp / "hyp.txt").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("missing"), std::string::npos) << r.err;
  EXPECT_NE(r.out.find("%WER 33.33 [ 1 / 3, 0 ins, 1 del, 0 sub ]"), std::string::npos) << r.out;
}

TEST(Cli, DecodeMatchesExhaustiveOracle) {
  TempDir tmp("cli_decode");
  const auto out = (tmp / "raw.txt").string();
  const auto r = run({"decode", "--trace-dir", data("traces"), "--dict", data("dict.txt"), "--beam", "4", "--output", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("utt/s"), std::string::npos);

  const auto dict = fb::load_dictionary(data("dict.txt"));
  const auto scorer = fb::TraceScorer::load_directory(fb::testing::data_dir() / "traces", dict.size());
  fb::DecodeConfig cfg;
  std::string expected;
  for (const auto& id : scorer.utterance_ids()) {
    const auto best = fb::testing::exhaustive_decode(scorer.trace(id), cfg, nullptr, true);
    expected += id + " " + fb::detokenize(best.tokens, dict) + "\n";
  }
  EXPECT_EQ(read_file(out), expected);
  EXPECT_EQ(expected, "utt1 his\nutt2 her\nutt3 he\n");
}

TEST(Cli, ZeroLmWeightEqualsNoLm) {
  TempDir tmp("cli_lambda");
  const std::vector<std::string> base{"decode", "--trace-dir", data("traces"), "--dict", data("dict.txt"), "--beam", "4"};
  auto plain = run(base);
  auto args = base;
  for (const char* a : {"--lm", "lookahead", "--word-vocab", "words3.txt", "--arpa", "uniform3.arpa", "--lm-weight", "0"}) {
    args.emplace_back(a);
  }
  args[args.size() - 5] = data("words3.txt");
  args[args.size() - 3] = data("uniform3.arpa");
  auto fused = run(args);
  ASSERT_EQ(plain.code, 0) << plain.err;
  ASSERT_EQ(fused.code, 0) << fused.err;
  EXPECT_EQ(plain.out, fused.out);
}

TEST(Cli, InvalidCoverageThresholdsAreUsageErrors) {
  const auto r = run({"decode", "--trace-dir", data("traces"), "--dict", data("dict.txt"), "--coverage", "improved",
                      "--tau1", "0.8", "--tau2", "0.5"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("tau2"), std::string::npos) << r.err;
}

TEST(Cli, LookaheadNeedsWordInputs) {
  const auto r = run({"decode", "--trace-dir", data("traces"), "--dict", data("dict.txt"), "--lm", "lookahead"});
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, AllLmModesRunAndScore) {
  TempDir tmp("cli_modes");
  for (const char* mode : {"none", "subword", "multilevel", "lookahead"}) {
    std::vector<std::string> args{"decode", "--trace-dir", data("traces"), "--dict", data("dict.txt"), "--lm", mode,
                                  "--beam", "3", "--ref", data("refs.txt"), "--summary-output",
                                  (tmp / (std::string(mode) + ".sum")).string()};
    if (std::string(mode) == "subword") {
      args.insert(args.end(), {"--char-arpa", data("chars.arpa")});
    } else if (std::string(mode) != "none") {
      args.insert(args.end(), {"--word-vocab", data("words3.txt"), "--arpa", data("uniform3.arpa")});
    }
    const auto r = run(args);
    EXPECT_EQ(r.code, 0) << mode << ": " << r.err;
    EXPECT_NE(read_file(tmp / (std::string(mode) + ".sum")).find("Utterances 3"), std::string::npos) << mode;
  }
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  TempDir tmp("cli_config");
  write_file(tmp / "run.ini", "[decode]\nbeam=1\ncoverage=improved\ntau1=0.9\ntau2=0.5\n");
  const std::vector<std::string> base{"decode", "--config", (tmp / "run.ini").string(), "--trace-dir", data("traces"),
                                      "--dict", data("dict.txt")};
  EXPECT_EQ(run(base).code, 2);
  auto fixed = base;
  fixed.insert(fixed.end(), {"--tau2", "1.5"});
  const auto r = run(fixed);
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, DecodeIsDeterministicAcrossWorkerCounts) {
  TempDir tmp("cli_det");
  auto decode = [&](const std::string& tag, const char* workers) {
    std::vector<std::string> args{"decode", "--trace-dir", data("traces"), "--dict", data("dict.txt"),
                                  "--lm", "lookahead", "--word-vocab", data("words3.txt"), "--arpa",
                                  data("uniform3.arpa"), "--beam", "5", "--coverage", "improved",
                                  "--eos-gamma", "1.5", "--batch-size", "1", "--workers", workers,
                                  "--seed", "7", "--ref", data("refs.txt"),
                                  "--output", (tmp / (tag + ".raw")).string(),
                                  "--aligned-output", (tmp / (tag + ".ali")).string(),
                                  "--summary-output", (tmp / (tag + ".sum")).string()};
    EXPECT_EQ(run(args).code, 0);
  };
  decode("a", "1");
  decode("b", "3");
  for (const char* ext : {".raw", ".ali", ".sum"}) {
    EXPECT_EQ(read_file(tmp / (std::string("a") + ext)), read_file(tmp / (std::string("b") + ext))) << ext;
    EXPECT_FALSE(read_file(tmp / (std::string("a") + ext)).empty()) << ext;
  }
}

TEST(Cli, DecodeFromScpAndArk) {
  TempDir tmp("cli_scp");
  for (const char* id : {"utt2", "utt1"}) {
    fb::FeatureMatrix m{id, 2, 3, {1, 2, 3, 4, 5, 6}};
    fb::write_ark_matrix(id, m, tmp / "f.ark", tmp / "f.scp");
  }
  const auto r = run({"decode", "--scp", (tmp / "f.scp").string(), "--trace-dir", data("traces"), "--dict",
                      data("dict.txt"), "--beam", "4"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "utt2 her\nutt1 his\n");
}
