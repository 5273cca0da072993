#include <gtest/gtest.h>

#include "test_support.hpp"

namespace fb = fused_beam;
using fb::testing::TempDir;
using fb::testing::write_file;

TEST(TokenDictionary, SpecialIdsAreFixed) {
  auto d = fb::TokenDictionary::from_tokens({"a", "b"});
  EXPECT_EQ(d.pad_id(), 0);
  EXPECT_EQ(d.eos_id(), 1);
  EXPECT_EQ(d.unk_id(), 2);
  EXPECT_EQ(d.token_of(0), "<pad>");
  EXPECT_EQ(d.token_of(1), "<eos>");
  EXPECT_EQ(d.token_of(2), "<unk>");
  EXPECT_EQ(d.index_of("a"), 3);
  EXPECT_EQ(d.index_of("b"), 4);
  EXPECT_EQ(d.token_of(d.space_id()), "<space>");
  EXPECT_EQ(d.size(), 6u);
}

TEST(TokenDictionary, ListedSpecialsKeepTheirSlots) {
  auto d = fb::TokenDictionary::from_tokens({"<unk>", "<space>", "x"});
  EXPECT_EQ(d.space_id(), 3);
  EXPECT_EQ(d.index_of("x"), 4);
  EXPECT_EQ(d.size(), 5u);
}

TEST(TokenDictionary, UnknownFallsBackToUnk) {
  auto d = fb::TokenDictionary::from_tokens({"a"});
  EXPECT_EQ(d.index_of("zz"), d.unk_id());
  EXPECT_FALSE(d.find("zz").has_value());
  EXPECT_THROW((void)d.token_of(99), fb::ContractError);
  EXPECT_THROW((void)d.token_of(-1), fb::ContractError);
}

TEST(TokenDictionary, DuplicateTokenIsRejected) {
  EXPECT_THROW(fb::TokenDictionary::from_tokens({"a", "b", "a"}), fb::FormatError);
}

TEST(TokenDictionary, LoadsFileAndReportsDuplicatesByLine) {
  TempDir tmp("dict");
  write_file(tmp / "ok.txt", "# comment\n<unk> 1\na 2\nb 3\n\n");
  auto d = fb::load_dictionary(tmp / "ok.txt");
  EXPECT_EQ(d.index_of("a"), 3);
  EXPECT_EQ(d.index_of("b"), 4);

  write_file(tmp / "dup.txt", "a 1\nb 2\na 3\n");
  try {
    (void)fb::load_dictionary(tmp / "dup.txt");
    FAIL() << "expected FormatError";
  } catch (const fb::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }

  write_file(tmp / "empty.txt", "\n# nothing\n");
  EXPECT_THROW(fb::load_dictionary(tmp / "empty.txt"), fb::FormatError);
  EXPECT_THROW(fb::load_dictionary(tmp / "missing.txt"), fb::IoError);
}

TEST(TokenDictionary, FixtureDictionary) {
  auto d = fb::load_dictionary(fb::testing::data_dir() / "dict.txt");
  EXPECT_EQ(d.size(), 30u);
  EXPECT_EQ(d.space_id(), 3);
  EXPECT_EQ(d.index_of("a"), 4);
  EXPECT_EQ(d.index_of("z"), 29);
}

TEST(Tokenize, InsertsSpaceBetweenWords) {
  auto d = fb::TokenDictionary::from_tokens({"H", "E", "L", "O", "W", "R", "D"});
  auto ids = fb::tokenize_transcript("HELLO  WORLD", d);
  ASSERT_EQ(ids.size(), 11u);
  EXPECT_EQ(ids[5], d.space_id());
  EXPECT_EQ(fb::detokenize(ids, d), "HELLO WORLD");
}

TEST(Tokenize, UnknownCharactersMapToUnk) {
  auto d = fb::TokenDictionary::from_tokens({"a"});
  auto ids = fb::tokenize_transcript("ab", d);
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[1], d.unk_id());
}

TEST(Tokenize, MultibyteCharactersAreSingleTokens) {
  auto d = fb::TokenDictionary::from_tokens({"\xC3\xA9", "t"});
  auto ids = fb::tokenize_transcript("\xC3\xA9t\xC3\xA9", d);
  ASSERT_EQ(ids.size(), 3u);
  EXPECT_EQ(ids[0], ids[2]);
  EXPECT_EQ(fb::split_utf8("\xE2\x80\x9Cq").size(), 2u);
}

TEST(Detokenize, DropsPadAndEos) {
  auto d = fb::TokenDictionary::from_tokens({"a", "b"});
  std::vector<fb::TokenId> ids{d.index_of("a"), d.pad_id(), d.space_id(), d.index_of("b"), d.eos_id()};
  EXPECT_EQ(fb::detokenize(ids, d), "a b");
  EXPECT_EQ(fb::detokenize(std::vector<fb::TokenId>{}, d), "");
}

TEST(Tokenize, RoundTripProperty) {
  auto d = fb::TokenDictionary::from_tokens({"a", "b", "c"});
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n_words(1, 5), len(1, 4), ch(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const int n = n_words(rng);
    for (int w = 0; w < n; ++w) {
      if (w) text += ' ';
      for (int k = len(rng); k > 0; --k) text += static_cast<char>('a' + ch(rng));
    }
    EXPECT_EQ(fb::detokenize(fb::tokenize_transcript(text, d), d), text);
  }
}
