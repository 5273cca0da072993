#pragma once

#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "fused_beam/char_lm.hpp"
#include "fused_beam/errors.hpp"
#include "fused_beam/lexicon_trie.hpp"
#include "fused_beam/score_matrix.hpp"
#include "fused_beam/token_dict.hpp"
#include "fused_beam/word_lm.hpp"

namespace fused_beam {

// Token history trimmed to what a CharLM consults.
inline void push_history(std::vector<TokenId>& history, TokenId token, std::size_t keep) {
  history.push_back(token);
  if (history.size() > keep) history.erase(history.begin(), history.end() - static_cast<std::ptrdiff_t>(keep));
}

/// Plain subword LM fusion: the CharLM row given the token history.
class SubwordFusion {
 public:
  struct State {
    std::vector<TokenId> history;
    bool operator==(const State&) const = default;
  };
  static constexpr bool kNonPositiveScores = true;

  explicit SubwordFusion(const CharLM& lm) : lm_(lm) {}

  std::size_t vocab_size() const { return lm_.vocab_size(); }
  State initial_state() const { return {}; }

  ScoreMatrix score(std::span<const State> states) const {
    ScoreMatrix out(states.size(), lm_.vocab_size());
    for (std::size_t b = 0; b < states.size(); ++b) {
      const auto row = lm_.log_probs(states[b].history);
      std::copy(row.begin(), row.end(), out.row(b).begin());
    }
    return out;
  }

  std::vector<State> advance(std::span<const State> states, std::span<const TokenId> tokens) const {
    if (states.size() != tokens.size()) throw ContractError("advance: states and tokens differ in length");
    std::vector<State> out(states.begin(), states.end());
    for (std::size_t b = 0; b < out.size(); ++b) push_history(out[b].history, tokens[b], lm_.context_size());
    return out;
  }

 private:
  const CharLM& lm_;
};

struct MultiLevelOptions {
  // Added at the boundary of a word missing from the lexicon.
  double oov_factor = -10.0;
};

/// Character LM scoring with word-level rescoring at boundaries: on `<space>`
/// (or `<eos>`) after a known word w the score gains
/// log P_W(w | h) - sum log P_char(chars of w); unknown words gain oov_factor.
class MultiLevelFusion {
 public:
  struct State {
    std::vector<TokenId> char_history;
    std::vector<TokenId> word;   // characters since the last boundary
    double word_char_logprob = 0.0;
    WordHistory word_history;
    std::shared_ptr<const WordDistribution> word_dist;

    bool operator==(const State& o) const {
      return char_history == o.char_history && word == o.word && word_char_logprob == o.word_char_logprob &&
             word_history == o.word_history &&
             (word_dist == o.word_dist || (word_dist && o.word_dist && *word_dist == *o.word_dist));
    }
  };
  // Boundary adjustments can be positive.
  static constexpr bool kNonPositiveScores = false;

  MultiLevelFusion(const CharLM& char_lm, const WordLM& word_lm, const PrefixTreeAutomaton& lexicon,
                   const TokenDictionary& dict, MultiLevelOptions options = {})
      : char_lm_(char_lm), word_lm_(word_lm), lexicon_(lexicon), options_(options), space_(dict.space_id()),
        eos_(dict.eos_id()) {
    if (char_lm.vocab_size() != dict.size()) throw ContractError("character LM does not match the dictionary");
    if (lexicon.num_words() != word_lm.vocab_size()) throw ContractError("word LM does not match the lexicon");
  }

  MultiLevelFusion(const MultiLevelFusion&) = delete;
  MultiLevelFusion& operator=(const MultiLevelFusion&) = delete;

  std::size_t vocab_size() const { return char_lm_.vocab_size(); }
  // Boundaries reached with no pending characters.
  std::uint64_t empty_word_count() const { return empty_words_.load(); }

  State initial_state() const {
    State s;
    s.word_history = word_lm_.start_history();
    s.word_dist = std::make_shared<const WordDistribution>(word_lm_.full_distribution(s.word_history));
    return s;
  }

  // Score change applied when the pending word is closed.
  double boundary_adjustment(const State& s) const {
    if (s.word.empty()) return 0.0;
    const StateId node = lexicon_.walk(s.word);
    if (node == kNoState || !lexicon_.is_final(node)) return options_.oov_factor;
    const double p = (*s.word_dist)[static_cast<std::size_t>(lexicon_.word_index(node))];
    return (p > 0.0 ? std::log(p) : kScoreFloor) - s.word_char_logprob;
  }

  ScoreMatrix score(std::span<const State> states) const {
    ScoreMatrix out(states.size(), char_lm_.vocab_size());
    for (std::size_t b = 0; b < states.size(); ++b) {
      const auto row = char_lm_.log_probs(states[b].char_history);
      auto dst = out.row(b);
      std::copy(row.begin(), row.end(), dst.begin());
      const double adj = boundary_adjustment(states[b]);
      dst[static_cast<std::size_t>(space_)] += adj;
      dst[static_cast<std::size_t>(eos_)] += adj;
    }
    return out;
  }

  std::vector<State> advance(std::span<const State> states, std::span<const TokenId> tokens) const {
    if (states.size() != tokens.size()) throw ContractError("advance: states and tokens differ in length");
    std::vector<State> out(states.begin(), states.end());
    std::map<WordHistory, std::shared_ptr<const WordDistribution>> fresh;
    for (std::size_t b = 0; b < out.size(); ++b) {
      State& s = out[b];
      const TokenId t = tokens[b];
      if (t == space_) {
        if (s.word.empty()) {
          empty_words_.fetch_add(1, std::memory_order_relaxed);
        } else {
          const StateId node = lexicon_.walk(s.word);
          const std::int32_t word =
              (node != kNoState && lexicon_.is_final(node)) ? lexicon_.word_index(node) : kUnknownWord;
          s.word_history = word_lm_.extend_history(s.word_history, word);
          auto& dist = fresh[s.word_history];
          if (!dist) dist = std::make_shared<const WordDistribution>(word_lm_.full_distribution(s.word_history));
          s.word_dist = dist;
          s.word.clear();
          s.word_char_logprob = 0.0;
        }
      } else if (t != eos_) {
        s.word_char_logprob += char_lm_.log_probs(states[b].char_history)[static_cast<std::size_t>(t)];
        s.word.push_back(t);
      }
      push_history(s.char_history, t, char_lm_.context_size());
    }
    return out;
  }

 private:
  const CharLM& char_lm_;
  const WordLM& word_lm_;
  const PrefixTreeAutomaton& lexicon_;
  MultiLevelOptions options_;
  TokenId space_;
  TokenId eos_;
  mutable std::atomic<std::uint64_t> empty_words_{0};
};

}  // namespace fused_beam
