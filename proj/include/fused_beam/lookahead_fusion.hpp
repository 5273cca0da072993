#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
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

/// Running sums g[k] = sum of P_W(word_r | h) for r <= k, in rank order.
struct CumulativeVector {
  std::vector<double> g;
  WordHistory history;
  // P(</s> | history); consulted when `<eos>` follows a word boundary.
  double eos_prob = 1.0;
  // log P(</s> | history + word) per word rank, so scoring a word end
  // needs no LM query.
  std::vector<double> log_eos_after;
  // log(g[ub(s)] - g[lb(s)]) per trie state, -inf for zero mass.
  std::vector<double> log_mass;

  // g at a rank, with g[-1] == 0 for "no lexicographically smaller word".
  double at(std::int32_t rank) const { return rank < 0 ? 0.0 : g[static_cast<std::size_t>(rank)]; }
  // P_W of the word with this rank.
  double word_prob(std::int32_t rank) const { return at(rank) - at(rank - 1); }

  bool operator==(const CumulativeVector&) const = default;
};

inline CumulativeVector cumsum_distribution(const WordDistribution& dist, WordHistory history) {
  CumulativeVector out;
  out.g.resize(dist.size());
  double running = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    running += dist[i];
    out.g[i] = running;
  }
  out.history = std::move(history);
  return out;
}

struct LookaheadOptions {
  // Log score for tokens that leave the lexicon.
  double oov_penalty = -10.0;
  // Log score used when the prefix mass is zero.
  double score_floor = kScoreFloor;
};

/// Per-hypothesis look-ahead state. `cumvec` is shared by hypotheses with a
/// common history and is never mutated.
struct LookaheadState {
  StateId trie_state = kRootState;  // kNoState while inside an out-of-lexicon word
  std::shared_ptr<const CumulativeVector> cumvec;
  WordHistory history;

  bool operator==(const LookaheadState& o) const {
    return trie_state == o.trie_state && history == o.history &&
           (cumvec == o.cumvec || (cumvec && o.cumvec && *cumvec == *o.cumvec));
  }
};

/// Character-level scores derived from a word LM through the prefix tree:
///
///   P(c | p, h) = (g[ub(pc)] - g[lb(pc)]) / (g[ub(p)] - g[lb(p)])
///
/// `<space>` at a word state gets P_W(p | h) / (g[ub(p)] - g[lb(p)]), which
/// makes the character scores along a word telescope to log P_W(w | h).
class LookaheadFusion {
 public:
  using State = LookaheadState;
  static constexpr bool kNonPositiveScores = true;

  LookaheadFusion(const PrefixTreeAutomaton& trie, const WordLM& lm, const TokenDictionary& dict,
                  LookaheadOptions options = {})
      : trie_(trie), lm_(lm), options_(options), vocab_(dict.size()), space_(dict.space_id()), eos_(dict.eos_id()) {
    if (trie.num_words() != lm.vocab_size()) throw ContractError("word LM vocabulary does not match the prefix tree");
    if (trie.alphabet_size() != dict.size()) throw ContractError("prefix tree alphabet does not match the dictionary");
  }

  LookaheadFusion(const LookaheadFusion&) = delete;
  LookaheadFusion& operator=(const LookaheadFusion&) = delete;

  std::size_t vocab_size() const { return vocab_; }
  const LookaheadOptions& options() const { return options_; }
  // Number of states scored with a zero prefix mass.
  std::uint64_t floored_count() const { return floored_.load(); }

  State initial_state() const {
    WordHistory h = lm_.start_history();
    return State{kRootState, refresh(h), h};
  }

  std::shared_ptr<const CumulativeVector> refresh(const WordHistory& h) const {
    auto cv = std::make_shared<CumulativeVector>(cumsum_distribution(lm_.full_distribution(h), h));
    cv->eos_prob = lm_.end_of_sentence_prob(h);
    cv->log_eos_after.resize(cv->g.size());
    for (std::size_t r = 0; r < cv->g.size(); ++r) {
      const double p = lm_.end_of_sentence_prob(lm_.extend_history(h, static_cast<std::int32_t>(r)));
      cv->log_eos_after[r] = p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
    }
    cv->log_mass.resize(trie_.num_states());
    for (std::size_t s = 0; s < cv->log_mass.size(); ++s) {
      const double m = cv->at(trie_.ub(static_cast<StateId>(s))) - cv->at(trie_.lb(static_cast<StateId>(s)));
      cv->log_mass[s] = m > 0.0 ? std::log(m) : -std::numeric_limits<double>::infinity();
    }
    return cv;
  }

  ScoreMatrix score(std::span<const State> states) const {
    const std::size_t batch = states.size();
    const std::size_t degree = trie_.max_out_degree();
    const auto trans = trie_.transitions();
    const auto labels = trie_.edge_labels();
    const auto words = trie_.word_indices();
    ScoreMatrix out(batch, vocab_, options_.oov_penalty);

    // Every ratio is a difference of per-state log masses cached with the history.
    for (std::size_t b = 0; b < batch; ++b) {
      const StateId s = states[b].trie_state;
      if (s < 0) continue;
      const CumulativeVector& g = *states[b].cumvec;
      const double* log_mass = g.log_mass.data();
      auto row = out.row(b);
      const double log_den = log_mass[s];
      if (!std::isfinite(log_den)) {
        floored_.fetch_add(1, std::memory_order_relaxed);
        for (std::size_t k = 0; k < degree; ++k) {
          const std::size_t cell = static_cast<std::size_t>(s) * degree + k;
          if (trans[cell] == kNoState) break;
          row[static_cast<std::size_t>(labels[cell])] = options_.score_floor;
        }
        if (words[static_cast<std::size_t>(s)] >= 0) {
          row[static_cast<std::size_t>(space_)] = options_.score_floor;
          row[static_cast<std::size_t>(eos_)] = options_.score_floor;
        }
        continue;
      }
      for (std::size_t k = 0; k < degree; ++k) {
        const std::size_t cell = static_cast<std::size_t>(s) * degree + k;
        const StateId next = trans[cell];
        if (next == kNoState) break;
        const double num = log_mass[next];
        row[static_cast<std::size_t>(labels[cell])] = std::isfinite(num) ? num - log_den : options_.score_floor;
      }
      const std::int32_t rank = words[static_cast<std::size_t>(s)];
      if (rank >= 0) {
        const double word_end = log_ratio(g.word_prob(rank), log_den);
        row[static_cast<std::size_t>(space_)] = word_end;
        const double log_eos = g.log_eos_after[static_cast<std::size_t>(rank)];
        row[static_cast<std::size_t>(eos_)] = std::isfinite(log_eos) ? word_end + log_eos : options_.score_floor;
      } else if (s == kRootState) {
        row[static_cast<std::size_t>(eos_)] = g.eos_prob > 0.0 ? std::log(g.eos_prob) : options_.score_floor;
      }
    }
    return out;
  }

  // Masked conditional update: every state is advanced speculatively; states
  // that did not hit a word boundary keep their history and cumvec, and only
  // the boundary states get a fresh word distribution.
  std::vector<State> advance(std::span<const State> states, std::span<const TokenId> tokens) const {
    if (states.size() != tokens.size()) throw ContractError("advance: states and tokens differ in length");
    const std::size_t batch = states.size();
    std::vector<StateId> current(batch);
    for (std::size_t b = 0; b < batch; ++b) current[b] = states[b].trie_state;
    const std::vector<StateId> next = trie_.advance(current, tokens);

    std::vector<State> out(states.begin(), states.end());
    std::vector<std::size_t> boundary;
    for (std::size_t b = 0; b < batch; ++b) {
      if (tokens[b] == space_) {
        boundary.push_back(b);
      } else if (tokens[b] != eos_) {
        out[b].trie_state = next[b];
      }
    }

    std::map<WordHistory, std::shared_ptr<const CumulativeVector>> fresh;
    for (std::size_t b : boundary) {
      const StateId s = states[b].trie_state;
      if (s == kRootState) continue;  // empty word
      const std::int32_t word = (s >= 0 && trie_.is_final(s)) ? trie_.word_index(s) : kUnknownWord;
      WordHistory h = lm_.extend_history(states[b].history, word);
      auto& cv = fresh[h];
      if (!cv) cv = refresh(h);
      out[b] = State{kRootState, cv, std::move(h)};
    }
    return out;
  }

 private:
  double log_ratio(double num, double log_den) const {
    return num > 0.0 ? std::log(num) - log_den : options_.score_floor;
  }

  const PrefixTreeAutomaton& trie_;
  const WordLM& lm_;
  LookaheadOptions options_;
  std::size_t vocab_;
  TokenId space_;
  TokenId eos_;
  mutable std::atomic<std::uint64_t> floored_{0};
};

}  // namespace fused_beam
