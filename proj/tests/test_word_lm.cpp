#include <gtest/gtest.h>

#include "test_support.hpp"

namespace fb = fused_beam;
using fb::testing::NaiveArpa;

namespace {

const std::vector<std::string> kVocab{"cat", "dog", "mat", "sat", "the"};

std::string history_word(std::int32_t code) {
  if (code == fb::kSentenceStart) return "<s>";
  if (code == fb::kUnknownWord || kVocab[static_cast<std::size_t>(code)] == "dog") return "<unk>";
  return kVocab[static_cast<std::size_t>(code)];
}

}  // namespace

TEST(NgramModel, MatchesNaiveBackoffOracle) {
  const auto path = fb::testing::data_dir() / "bigram.arpa";
  const NaiveArpa oracle(fb::testing::read_file(path));
  const fb::ArpaWordLM lm = fb::load_arpa(path, kVocab);
  ASSERT_EQ(lm.context_size(), 2u);
  ASSERT_EQ(lm.num_missing(), 1u);

  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> code(-2, static_cast<int>(kVocab.size()) - 1);
  std::uniform_int_distribution<int> len(0, 3);
  for (int trial = 0; trial < 300; ++trial) {
    fb::WordHistory h;
    for (int k = len(rng); k > 0; --k) h.words.push_back(code(rng));
    std::vector<std::string> hs;
    for (auto c : h.words) hs.push_back(history_word(c));
    for (std::int32_t r = 0; r < static_cast<std::int32_t>(kVocab.size()); ++r) {
      const std::string w = kVocab[static_cast<std::size_t>(r)] == "dog" ? "<unk>" : kVocab[static_cast<std::size_t>(r)];
      const double expected = std::pow(10.0, oracle.log10_prob(hs, w));
      EXPECT_NEAR(lm.raw_prob(h, r), expected, 1e-12 * expected) << "trial " << trial << " word " << w;
    }
    EXPECT_NEAR(lm.end_of_sentence_prob(h), std::pow(10.0, oracle.log10_prob(hs, "</s>")), 1e-12);
  }
}

TEST(NgramModel, HandComputedBackoff) {
  const auto path = fb::testing::data_dir() / "bigram.arpa";
  auto model = fb::NgramModel::load(path);
  const auto the = *model.word_id("the"), cat = *model.word_id("cat"), sat = *model.word_id("sat"),
             mat = *model.word_id("mat"), bos = *model.word_id("<s>");
  // Explicit trigram.
  EXPECT_DOUBLE_EQ(model.log10_prob(std::vector<std::int32_t>{bos, the}, cat), -0.05);
  // No trigram "<s> the mat": bow(<s> the) + P(mat | the).
  EXPECT_DOUBLE_EQ(model.log10_prob(std::vector<std::int32_t>{bos, the}, mat), -0.1 + -0.6);
  // No bigram "sat cat": bow(sat) + P(cat).
  EXPECT_DOUBLE_EQ(model.log10_prob(std::vector<std::int32_t>{sat}, cat), -0.25 + -0.9);
  // Longer context is truncated to order - 1.
  EXPECT_DOUBLE_EQ(model.log10_prob(std::vector<std::int32_t>{sat, the, cat}, sat), -0.1);
  EXPECT_EQ(model.order(), 3);
}

TEST(NgramModel, DistributionIsNormalizedOverVocabulary) {
  const fb::ArpaWordLM lm = fb::load_arpa(fb::testing::data_dir() / "bigram.arpa", kVocab);
  for (const auto& h : {lm.start_history(), lm.extend_history(lm.start_history(), 4),
                        lm.extend_history(lm.extend_history(lm.start_history(), 4), 0)}) {
    const auto p = lm.full_distribution(h);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) EXPECT_GT(v, 0.0);
  }
}

TEST(NgramModel, UniformFixture) {
  const std::vector<std::string> vocab{"her", "here", "his"};
  const fb::ArpaWordLM lm = fb::load_arpa(fb::testing::data_dir() / "uniform3.arpa", vocab);
  EXPECT_EQ(lm.context_size(), 0u);
  EXPECT_TRUE(lm.start_history().words.empty());
  for (double v : lm.full_distribution(lm.start_history())) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(lm.end_of_sentence_prob(lm.start_history()), 0.25, 1e-9);
}

TEST(NgramModel, FormatErrorsCarryLineNumbers) {
  auto expect_line = [](const std::string& text, const std::string& line) {
    std::istringstream in(text);
    try {
      (void)fb::NgramModel::parse(in, "x.arpa");
      ADD_FAILURE() << "expected FormatError for:\n" << text;
    } catch (const fb::FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("x.arpa:" + line), std::string::npos) << e.what();
    }
  };
  expect_line("\\data\\\nngram 1=1\n\n\\1-grams:\nabc word\n\n\\end\\\n", "5");
  expect_line("\\data\\\nngram 1=2\n\n\\1-grams:\n-1 a\n\n\\end\\\n", "7");
  expect_line("\\data\\\nngram 4=1\n", "2");
  std::istringstream no_header("ngram 1=1\n");
  EXPECT_THROW((void)fb::NgramModel::parse(no_header), fb::FormatError);
  std::istringstream no_end("\\data\\\nngram 1=1\n\n\\1-grams:\n-1 a\n");
  EXPECT_THROW((void)fb::NgramModel::parse(no_end), fb::FormatError);
  EXPECT_THROW((void)fb::NgramModel::load("/nonexistent/file.arpa"), fb::IoError);
}

TEST(WordHistory, KeepsOnlyContextWords) {
  const fb::ArpaWordLM lm = fb::load_arpa(fb::testing::data_dir() / "bigram.arpa", kVocab);
  auto h = lm.start_history();
  EXPECT_EQ(h.words, (std::vector<std::int32_t>{fb::kSentenceStart}));
  h = lm.extend_history(h, 4);
  h = lm.extend_history(h, 0);
  h = lm.extend_history(h, fb::kUnknownWord);
  EXPECT_EQ(h.words, (std::vector<std::int32_t>{0, fb::kUnknownWord}));
  EXPECT_THROW((void)lm.extend_history(h, 5), fb::ContractError);
}

TEST(TableWordLM, ExplicitRowsBackoffAndLeftoverMass) {
  const std::vector<std::string> vocab{"a", "b", "c", "d"};
  std::istringstream in(
      "# comment\n"
      "-\ta\t0.4\n"
      "-\tb\t0.2\n"
      "-\t</s>\t0.2\n"
      "a\tb\t0.9\n"
      "a\tc\t0.1\n"
      "<s> a\td\t1.0\n");
  const auto lm = fb::TableWordLM::parse(in, vocab);
  EXPECT_EQ(lm.context_size(), 2u);

  // Empty history: c and d share 1 - 0.4 - 0.2 - 0.2.
  auto p = lm.full_distribution(fb::WordHistory{});
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[1], 0.25, 1e-12);
  EXPECT_NEAR(p[2], 0.125, 1e-12);
  EXPECT_NEAR(p[3], 0.125, 1e-12);
  EXPECT_NEAR(lm.end_of_sentence_prob(fb::WordHistory{}), 0.2, 1e-12);

  // "b a" is not listed; drops to "a".
  p = lm.full_distribution(fb::WordHistory{{1, 0}});
  EXPECT_NEAR(p[1], 0.9, 1e-12);
  EXPECT_NEAR(p[2], 0.1, 1e-12);
  EXPECT_EQ(p[0], 0.0);

  p = lm.full_distribution(fb::WordHistory{{fb::kSentenceStart, 0}});
  EXPECT_NEAR(p[3], 1.0, 1e-12);

  // Unknown single-word history drops to the empty row.
  p = lm.full_distribution(fb::WordHistory{{3}});
  EXPECT_NEAR(p[0], 0.5, 1e-12);
}

TEST(TableWordLM, UniformDefault) {
  const auto lm = fb::TableWordLM::uniform({"x", "y", "z", "w"});
  for (double v : lm.full_distribution(lm.start_history())) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_DOUBLE_EQ(lm.end_of_sentence_prob(lm.start_history()), 1.0);
}

TEST(TableWordLM, RejectsMalformedRows) {
  std::istringstream bad_cols("a\tb\n");
  EXPECT_THROW((void)fb::TableWordLM::parse(bad_cols, {"a", "b"}), fb::FormatError);
  std::istringstream bad_prob("-\ta\tlots\n");
  EXPECT_THROW((void)fb::TableWordLM::parse(bad_prob, {"a", "b"}), fb::FormatError);
  std::istringstream out_of_range("-\ta\t1.5\n");
  EXPECT_THROW((void)fb::TableWordLM::parse(out_of_range, {"a", "b"}), fb::FormatError);
}

TEST(CharLm, ArpaCharacterModelIsNormalized) {
  const auto dict = fb::TokenDictionary::from_tokens({"a", "b"});
  std::istringstream in(
      "\\data\\\nngram 1=5\nngram 2=2\n\n\\1-grams:\n-0.5 a -0.2\n-0.6 b\n-0.9 </s>\n-99 <s> -0.1\n-1.5 <space>\n\n"
      "\\2-grams:\n-0.1 a b\n-0.3 <s> a\n\n\\end\\\n");
  const fb::ArpaCharLM lm(fb::NgramModel::parse(in), dict);
  for (const auto& hist : {std::vector<fb::TokenId>{}, std::vector<fb::TokenId>{3}, std::vector<fb::TokenId>{4, 3}}) {
    const auto row = lm.log_probs(hist);
    ASSERT_EQ(row.size(), dict.size());
    double mass = 0.0;
    for (std::size_t t = 1; t < row.size(); ++t) mass += std::exp(row[t]);
    EXPECT_NEAR(mass, 1.0, 1e-9);
    EXPECT_EQ(row[0], fb::kScoreFloor);
  }
  const fb::UniformCharLM uniform(dict);
  const auto row = uniform.log_probs({});
  EXPECT_NEAR(std::exp(row[1]) * static_cast<double>(dict.size() - 1), 1.0, 1e-12);
}
