#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "fused_beam/binary_io.hpp"
#include "fused_beam/errors.hpp"
#include "fused_beam/token_dict.hpp"

namespace fused_beam {

using StateId = std::int32_t;

// Marks a missing transition and, in fusion states, an out-of-vocabulary prefix.
inline constexpr StateId kNoState = -1;
inline constexpr StateId kRootState = 0;

struct BoundRanks {
  std::vector<std::int32_t> ub;
  std::vector<std::int32_t> lb;
};

/// Prefix tree over a word vocabulary, stored as flat arrays so that batches
/// of states can be advanced and bounded by plain indexed gathers.
///
/// States are numbered in depth-first preorder over the lexicographically
/// sorted vocabulary, so the words below any state occupy a contiguous rank
/// range [lb + 1, ub]. Order is over character-id sequences, with a prefix
/// sorting before its extensions.
class PrefixTreeAutomaton {
 public:
  PrefixTreeAutomaton() = default;

  static PrefixTreeAutomaton build(std::span<const std::string> vocab, const TokenDictionary& dict) {
    std::vector<std::vector<TokenId>> words;
    words.reserve(vocab.size());
    for (const auto& word : vocab) {
      if (word.empty()) throw ContractError("vocabulary contains an empty word");
      std::vector<TokenId> ids;
      for (const auto& ch : split_utf8(word)) {
        auto id = dict.find(ch);
        if (!id || dict.is_special(*id)) {
          throw ContractError("word '" + word + "' uses character '" + ch + "' not in the dictionary");
        }
        ids.push_back(*id);
      }
      words.push_back(std::move(ids));
    }
    return build_from_ids(std::move(words), dict.size());
  }

  static PrefixTreeAutomaton build_from_ids(std::vector<std::vector<TokenId>> words, std::size_t alphabet_size) {
    if (words.empty()) throw ContractError("vocabulary is empty");
    std::sort(words.begin(), words.end());
    if (std::adjacent_find(words.begin(), words.end()) != words.end()) {
      throw ContractError("vocabulary contains a duplicate word");
    }

    PrefixTreeAutomaton t;
    t.alphabet_size_ = alphabet_size;
    t.num_words_ = words.size();
    // Adjacency built as lists first, then packed into the rectangular matrix.
    std::vector<std::vector<std::pair<TokenId, StateId>>> children(1);
    t.parent_.push_back(kNoState);
    t.in_label_.push_back(-1);
    t.word_index_.push_back(-1);
    t.first_rank_.push_back(0);
    t.ub_.push_back(0);

    for (std::size_t rank = 0; rank < words.size(); ++rank) {
      const auto& w = words[rank];
      if (w.empty()) throw ContractError("vocabulary contains an empty word");
      StateId s = kRootState;
      t.ub_[0] = static_cast<std::int32_t>(rank);
      for (TokenId c : w) {
        if (c < 0 || static_cast<std::size_t>(c) >= alphabet_size) throw ContractError("character id out of range");
        auto& kids = children[static_cast<std::size_t>(s)];
        StateId next = kNoState;
        if (!kids.empty() && kids.back().first == c) next = kids.back().second;
        if (next == kNoState) {
          next = static_cast<StateId>(t.parent_.size());
          kids.emplace_back(c, next);
          children.emplace_back();
          t.parent_.push_back(s);
          t.in_label_.push_back(c);
          t.word_index_.push_back(-1);
          t.first_rank_.push_back(static_cast<std::int32_t>(rank));
          t.ub_.push_back(0);
        }
        s = next;
        t.ub_[static_cast<std::size_t>(s)] = static_cast<std::int32_t>(rank);
      }
      t.word_index_[static_cast<std::size_t>(s)] = static_cast<std::int32_t>(rank);
    }

    const std::size_t n = t.parent_.size();
    t.max_out_degree_ = 0;
    for (const auto& kids : children) t.max_out_degree_ = std::max(t.max_out_degree_, kids.size());
    t.transitions_.assign(n * t.max_out_degree_, kNoState);
    t.labels_.assign(n * t.max_out_degree_, -1);
    t.lb_.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < children[s].size(); ++k) {
        t.labels_[s * t.max_out_degree_ + k] = children[s][k].first;
        t.transitions_[s * t.max_out_degree_ + k] = children[s][k].second;
      }
      t.lb_[s] = t.first_rank_[s] - 1;
    }
    t.final_of_rank_.assign(t.num_words_, kNoState);
    for (std::size_t s = 0; s < n; ++s) {
      if (t.word_index_[s] >= 0) t.final_of_rank_[static_cast<std::size_t>(t.word_index_[s])] = static_cast<StateId>(s);
    }
    return t;
  }

  std::size_t num_states() const { return parent_.size(); }
  std::size_t num_words() const { return num_words_; }
  std::size_t max_out_degree() const { return max_out_degree_; }
  std::size_t alphabet_size() const { return alphabet_size_; }

  bool valid(StateId s) const { return s >= 0 && static_cast<std::size_t>(s) < parent_.size(); }
  bool is_final(StateId s) const { return word_index_[idx(s)] >= 0; }
  std::int32_t word_index(StateId s) const { return word_index_[idx(s)]; }
  std::int32_t ub(StateId s) const { return ub_[idx(s)]; }
  std::int32_t lb(StateId s) const { return lb_[idx(s)]; }
  StateId parent(StateId s) const { return parent_[idx(s)]; }
  TokenId incoming_label(StateId s) const { return in_label_[idx(s)]; }
  StateId final_state(std::int32_t rank) const { return final_of_rank_.at(static_cast<std::size_t>(rank)); }

  // Raw arrays for vectorized gathers.
  std::span<const StateId> transitions() const { return transitions_; }
  std::span<const TokenId> edge_labels() const { return labels_; }
  std::span<const std::int32_t> ub_ranks() const { return ub_; }
  std::span<const std::int32_t> lb_ranks() const { return lb_; }
  std::span<const std::int32_t> word_indices() const { return word_index_; }

  StateId child(StateId s, TokenId c) const {
    if (s < 0) return kNoState;
    const std::size_t base = idx(s) * max_out_degree_;
    for (std::size_t k = 0; k < max_out_degree_; ++k) {
      const StateId next = transitions_[base + k];
      if (next == kNoState) break;
      if (labels_[base + k] == c) return next;
    }
    return kNoState;
  }

  std::vector<StateId> advance(std::span<const StateId> states, std::span<const TokenId> chars) const {
    if (states.size() != chars.size()) throw ContractError("advance: states and chars differ in length");
    std::vector<StateId> out(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i] != kNoState) (void)idx(states[i]);
      out[i] = child(states[i], chars[i]);
    }
    return out;
  }

  BoundRanks bounds(std::span<const StateId> states) const {
    BoundRanks out;
    out.ub.resize(states.size());
    out.lb.resize(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (!valid(states[i])) throw ContractError("bounds: state " + std::to_string(states[i]) + " is not a trie state");
      out.ub[i] = ub_[static_cast<std::size_t>(states[i])];
      out.lb[i] = lb_[static_cast<std::size_t>(states[i])];
    }
    return out;
  }

  std::vector<TokenId> spelling(StateId s) const {
    std::vector<TokenId> out;
    for (StateId cur = s; cur != kRootState; cur = parent(cur)) out.push_back(incoming_label(cur));
    std::reverse(out.begin(), out.end());
    return out;
  }

  // Follows `chars` from the root; kNoState if the path leaves the trie.
  StateId walk(std::span<const TokenId> chars) const {
    StateId s = kRootState;
    for (TokenId c : chars) {
      s = child(s, c);
      if (s == kNoState) break;
    }
    return s;
  }

  // Vocabulary in rank order, as character-id sequences.
  std::vector<std::vector<TokenId>> sorted_words() const {
    std::vector<std::vector<TokenId>> out;
    out.reserve(num_words_);
    for (StateId s : final_of_rank_) out.push_back(spelling(s));
    return out;
  }

  std::vector<std::string> sorted_words(const TokenDictionary& dict) const {
    std::vector<std::string> out;
    for (const auto& ids : sorted_words()) {
      std::string w;
      for (TokenId c : ids) w += dict.token_of(c);
      out.push_back(std::move(w));
    }
    return out;
  }

  bool operator==(const PrefixTreeAutomaton&) const = default;

  // Layout: "PTA1", u32 states, u32 max_out_degree, u32 words, u32 alphabet,
  // then transitions, labels (i32, states x degree), finals (u8), word index,
  // ub, lb (i32 per state). All little-endian.
  void save(std::ostream& os) const {
    os.write("PTA1", 4);
    detail::write_le(os, static_cast<std::uint32_t>(num_states()));
    detail::write_le(os, static_cast<std::uint32_t>(max_out_degree_));
    detail::write_le(os, static_cast<std::uint32_t>(num_words_));
    detail::write_le(os, static_cast<std::uint32_t>(alphabet_size_));
    for (StateId v : transitions_) detail::write_le(os, v);
    for (TokenId v : labels_) detail::write_le(os, v);
    for (std::int32_t v : word_index_) detail::write_le(os, static_cast<std::uint8_t>(v >= 0 ? 1 : 0));
    for (std::int32_t v : word_index_) detail::write_le(os, v);
    for (std::int32_t v : ub_) detail::write_le(os, v);
    for (std::int32_t v : lb_) detail::write_le(os, v);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    save(os);
    if (!os.flush()) throw IoError("write failed on " + path.string());
  }

  static PrefixTreeAutomaton load(std::istream& is) {
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::string_view(magic, 4) != "PTA1") throw FormatError("not a PTA1 prefix tree file");
    const auto n = detail::read_le<std::uint32_t>(is);
    const auto degree = detail::read_le<std::uint32_t>(is);
    const auto n_words = detail::read_le<std::uint32_t>(is);
    const auto alphabet = detail::read_le<std::uint32_t>(is);
    if (n == 0 || n_words == 0 || n_words >= n || degree == 0 || degree > alphabet || n > (1u << 28)) {
      throw FormatError("PTA1 header has inconsistent counts");
    }
    const std::size_t cells = std::size_t{n} * degree;
    std::vector<StateId> trans(cells);
    std::vector<TokenId> labels(cells);
    for (auto& v : trans) v = detail::read_le<StateId>(is);
    for (auto& v : labels) v = detail::read_le<TokenId>(is);
    std::vector<std::uint8_t> finals(n);
    std::vector<std::int32_t> word_index(n), ub(n), lb(n);
    for (auto& v : finals) v = detail::read_le<std::uint8_t>(is);
    for (auto& v : word_index) v = detail::read_le<std::int32_t>(is);
    for (auto& v : ub) v = detail::read_le<std::int32_t>(is);
    for (auto& v : lb) v = detail::read_le<std::int32_t>(is);

    // Structural checks: every non-root state has exactly one parent, edges
    // point forward (preorder), labels are in range.
    std::vector<StateId> parent(n, kNoState);
    std::vector<TokenId> in_label(n, -1);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < degree; ++k) {
        const StateId next = trans[s * degree + k];
        const TokenId c = labels[s * degree + k];
        if (next == kNoState) {
          if (c != -1) throw FormatError("PTA1: label on empty transition slot");
          continue;
        }
        if (next <= static_cast<StateId>(s) || next >= static_cast<StateId>(n) || c < 0 ||
            static_cast<std::uint32_t>(c) >= alphabet) {
          throw FormatError("PTA1: transition out of range");
        }
        if (parent[static_cast<std::size_t>(next)] != kNoState) throw FormatError("PTA1: state with two parents");
        parent[static_cast<std::size_t>(next)] = static_cast<StateId>(s);
        in_label[static_cast<std::size_t>(next)] = c;
      }
    }
    std::vector<std::vector<TokenId>> words;
    for (std::size_t s = 1; s < n; ++s) {
      if (parent[s] == kNoState) throw FormatError("PTA1: unreachable state " + std::to_string(s));
    }
    for (std::size_t s = 0; s < n; ++s) {
      if (finals[s] > 1 || (finals[s] == 1) != (word_index[s] >= 0)) throw FormatError("PTA1: inconsistent final flags");
      if (!finals[s]) continue;
      std::vector<TokenId> w;
      for (std::size_t cur = s; cur != 0; cur = static_cast<std::size_t>(parent[cur])) w.push_back(in_label[cur]);
      std::reverse(w.begin(), w.end());
      words.push_back(std::move(w));
    }
    if (words.size() != n_words) throw FormatError("PTA1: final state count does not match word count");

    // Canonical form: rebuilding from the spelled words must reproduce every array.
    PrefixTreeAutomaton rebuilt;
    try {
      rebuilt = build_from_ids(words, alphabet);
    } catch (const ContractError& e) {
      throw FormatError(std::string("PTA1: ") + e.what());
    }
    if (rebuilt.transitions_ != trans || rebuilt.labels_ != labels || rebuilt.word_index_ != word_index ||
        rebuilt.ub_ != ub || rebuilt.lb_ != lb) {
      throw FormatError("PTA1: arrays violate prefix tree invariants");
    }
    return rebuilt;
  }

  static PrefixTreeAutomaton load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return load(is);
  }

 private:
  std::size_t idx(StateId s) const {
    if (!valid(s)) throw ContractError("state " + std::to_string(s) + " is not a trie state");
    return static_cast<std::size_t>(s);
  }

  std::size_t alphabet_size_ = 0;
  std::size_t num_words_ = 0;
  std::size_t max_out_degree_ = 0;
  std::vector<StateId> transitions_;
  std::vector<TokenId> labels_;
  std::vector<StateId> parent_;
  std::vector<TokenId> in_label_;
  std::vector<std::int32_t> word_index_;
  std::vector<std::int32_t> first_rank_;
  std::vector<std::int32_t> ub_;
  std::vector<std::int32_t> lb_;
  std::vector<StateId> final_of_rank_;
};

}  // namespace fused_beam
