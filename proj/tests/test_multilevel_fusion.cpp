#include <gtest/gtest.h>

#include "test_support.hpp"

namespace fb = fused_beam;
using fb::testing::FixedWordLM;

namespace {

struct Fixture {
  fb::TokenDictionary dict = fb::load_dictionary(fb::testing::data_dir() / "dict.txt");
  fb::PrefixTreeAutomaton trie = fb::PrefixTreeAutomaton::build(std::vector<std::string>{"her", "here", "his"}, dict);
  fb::UniformCharLM chars{dict};
  FixedWordLM words{{0.5, 0.25, 0.25}};

  fb::TokenId id(const char* s) const { return dict.index_of(s); }
};

template <typename F>
typename F::State feed(const F& f, typename F::State s, const std::vector<fb::TokenId>& tokens) {
  for (fb::TokenId t : tokens) s = f.advance(std::vector<typename F::State>{s}, std::vector<fb::TokenId>{t})[0];
  return s;
}

}  // namespace

TEST(SubwordFusion, ReturnsCharacterRows) {
  Fixture s;
  fb::SubwordFusion f(s.chars);
  const auto st = feed(f, f.initial_state(), {s.id("h"), s.id("e")});
  const auto row = f.score(std::vector<fb::SubwordFusion::State>{st});
  const auto expected = s.chars.log_probs(st.history);
  for (std::size_t t = 0; t < s.dict.size(); ++t) EXPECT_EQ(row(0, t), expected[t]);
  EXPECT_TRUE(st.history.empty());  // uniform LM keeps no context
}

TEST(MultiLevelFusion, KnownWordIsRescoredAtBoundary) {
  Fixture s;
  fb::MultiLevelFusion f(s.chars, s.words, s.trie, s.dict);
  const double per_char = -std::log(static_cast<double>(s.dict.size() - 1));
  const auto st = feed(f, f.initial_state(), {s.id("h"), s.id("e"), s.id("r")});
  EXPECT_NEAR(st.word_char_logprob, 3 * per_char, 1e-12);
  EXPECT_NEAR(f.boundary_adjustment(st), std::log(0.5) - 3 * per_char, 1e-12);

  const auto row = f.score(std::vector<fb::MultiLevelFusion::State>{st});
  EXPECT_NEAR(row(0, static_cast<std::size_t>(s.dict.space_id())), std::log(0.5) - 2 * per_char, 1e-12);
  EXPECT_NEAR(row(0, static_cast<std::size_t>(s.dict.eos_id())), std::log(0.5) - 2 * per_char, 1e-12);
  EXPECT_NEAR(row(0, static_cast<std::size_t>(s.id("e"))), per_char, 1e-12);

  // Character scores along the word plus the boundary term equal log P_W(w),
  // on top of the space character's own score.
  double total = 0.0;
  auto cur = f.initial_state();
  for (fb::TokenId t : {s.id("h"), s.id("e"), s.id("r"), s.dict.space_id()}) {
    total += f.score(std::vector<fb::MultiLevelFusion::State>{cur})(0, static_cast<std::size_t>(t));
    cur = feed(f, cur, {t});
  }
  EXPECT_NEAR(total, std::log(0.5) + per_char, 1e-12);
  EXPECT_TRUE(cur.word.empty());
  EXPECT_EQ(cur.word_history.words.back(), 0);
}

TEST(MultiLevelFusion, UnknownWordGetsOovFactor) {
  Fixture s;
  fb::MultiLevelFusion f(s.chars, s.words, s.trie, s.dict, fb::MultiLevelOptions{-4.0});
  const auto st = feed(f, f.initial_state(), {s.id("h"), s.id("e")});
  EXPECT_EQ(f.boundary_adjustment(st), -4.0);
  const auto closed = feed(f, st, {s.dict.space_id()});
  EXPECT_EQ(closed.word_history.words.back(), fb::kUnknownWord);
}

TEST(MultiLevelFusion, EmptyWordsAreCounted) {
  Fixture s;
  fb::MultiLevelFusion f(s.chars, s.words, s.trie, s.dict);
  const auto root = f.initial_state();
  EXPECT_EQ(f.boundary_adjustment(root), 0.0);
  const auto after = feed(f, root, {s.dict.space_id(), s.dict.space_id()});
  EXPECT_EQ(f.empty_word_count(), 2u);
  EXPECT_EQ(after.word_history, root.word_history);
}

TEST(MultiLevelFusion, BatchedEqualsSingle) {
  Fixture s;
  fb::MultiLevelFusion f(s.chars, s.words, s.trie, s.dict);
  std::mt19937_64 rng(4);
  std::vector<fb::TokenId> pool{s.id("h"), s.id("e"), s.id("r"), s.id("i"), s.id("s"), s.dict.space_id()};
  std::vector<fb::MultiLevelFusion::State> states(16, f.initial_state());
  for (int step = 0; step < 8; ++step) {
    std::vector<fb::TokenId> tokens(states.size());
    for (auto& t : tokens) t = pool[rng() % pool.size()];
    const auto scores = f.score(states);
    const auto next = f.advance(states, tokens);
    for (std::size_t b = 0; b < states.size(); ++b) {
      const auto one = f.score(std::vector<fb::MultiLevelFusion::State>{states[b]});
      for (std::size_t t = 0; t < s.dict.size(); ++t) EXPECT_EQ(one(0, t), scores(b, t));
      EXPECT_TRUE(feed(f, states[b], {tokens[b]}) == next[b]);
    }
    states = next;
  }
}
