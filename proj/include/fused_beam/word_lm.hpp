#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fused_beam/arpa.hpp"
#include "fused_beam/errors.hpp"

namespace fused_beam {

// History entries are vocabulary ranks, or one of these markers.
inline constexpr std::int32_t kSentenceStart = -1;
inline constexpr std::int32_t kUnknownWord = -2;

struct WordHistory {
  std::vector<std::int32_t> words;  // oldest first

  auto operator<=>(const WordHistory&) const = default;
  bool operator==(const WordHistory&) const = default;
};

// Probabilities over the decoder's sorted vocabulary, renormalized to sum to 1.
using WordDistribution = std::vector<double>;

/// Word-probability provider for fusion. Implementations are immutable after
/// construction; histories are plain values.
class WordLM {
 public:
  virtual ~WordLM() = default;

  virtual std::size_t vocab_size() const = 0;
  // Number of past words that condition a prediction.
  virtual std::size_t context_size() const = 0;
  virtual WordDistribution full_distribution(const WordHistory& h) const = 0;
  // Raw end-of-sentence probability given h (not part of the vocabulary mass).
  virtual double end_of_sentence_prob(const WordHistory& h) const = 0;

  WordHistory start_history() const {
    WordHistory h;
    if (context_size() > 0) h.words.push_back(kSentenceStart);
    return h;
  }

  WordHistory extend_history(const WordHistory& h, std::int32_t word_rank) const {
    if (word_rank != kUnknownWord && (word_rank < 0 || static_cast<std::size_t>(word_rank) >= vocab_size())) {
      throw ContractError("word rank " + std::to_string(word_rank) + " out of range");
    }
    WordHistory out = h;
    out.words.push_back(word_rank);
    const std::size_t keep = context_size();
    if (out.words.size() > keep) out.words.erase(out.words.begin(), out.words.end() - static_cast<std::ptrdiff_t>(keep));
    return out;
  }
};

namespace detail {

inline void renormalize(WordDistribution& p) {
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (total > 0.0) {
    for (double& v : p) v /= total;
  } else if (!p.empty()) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
  }
}

}  // namespace detail

/// ARPA back-off model restricted to a closed vocabulary. Vocabulary words
/// absent from the ARPA unigrams split the `<unk>` probability equally.
class ArpaWordLM final : public WordLM {
 public:
  ArpaWordLM(NgramModel model, std::vector<std::string> vocab) : model_(std::move(model)), vocab_(std::move(vocab)) {
    unk_ = model_.word_id("<unk>").value_or(kArpaNoWord);
    bos_ = model_.word_id("<s>").value_or(kArpaNoWord);
    eos_ = model_.word_id("</s>").value_or(kArpaNoWord);
    ids_.reserve(vocab_.size());
    for (const auto& w : vocab_) {
      auto id = model_.word_id(w);
      ids_.push_back(id.value_or(kArpaNoWord));
      if (!id) ++num_missing_;
    }
  }

  std::size_t vocab_size() const override { return vocab_.size(); }
  std::size_t context_size() const override { return static_cast<std::size_t>(model_.order() - 1); }
  const NgramModel& model() const { return model_; }
  std::size_t num_missing() const { return num_missing_; }

  // Unnormalized P(word | h) for a vocabulary rank.
  double raw_prob(const WordHistory& h, std::int32_t rank) const {
    const auto ctx = context_ids(h);
    return raw_prob(ctx, rank);
  }

  WordDistribution full_distribution(const WordHistory& h) const override {
    const auto ctx = context_ids(h);
    WordDistribution p(vocab_.size());
    for (std::size_t r = 0; r < vocab_.size(); ++r) p[r] = raw_prob(ctx, static_cast<std::int32_t>(r));
    detail::renormalize(p);
    return p;
  }

  double end_of_sentence_prob(const WordHistory& h) const override {
    if (eos_ == kArpaNoWord) return 1.0;
    return std::pow(10.0, model_.log10_prob(context_ids(h), eos_));
  }

 private:
  std::vector<std::int32_t> context_ids(const WordHistory& h) const {
    std::vector<std::int32_t> ctx;
    ctx.reserve(h.words.size());
    for (std::int32_t w : h.words) {
      if (w == kSentenceStart) {
        ctx.push_back(bos_);
      } else if (w == kUnknownWord) {
        ctx.push_back(unk_);
      } else {
        const std::int32_t id = ids_[static_cast<std::size_t>(w)];
        ctx.push_back(id == kArpaNoWord ? unk_ : id);
      }
    }
    return ctx;
  }

  double raw_prob(std::span<const std::int32_t> ctx, std::int32_t rank) const {
    const std::int32_t id = ids_[static_cast<std::size_t>(rank)];
    if (id != kArpaNoWord) return std::pow(10.0, model_.log10_prob(ctx, id));
    if (unk_ == kArpaNoWord) return 0.0;
    return std::pow(10.0, model_.log10_prob(ctx, unk_)) / static_cast<double>(num_missing_);
  }

  NgramModel model_;
  std::vector<std::string> vocab_;
  std::vector<std::int32_t> ids_;
  std::int32_t unk_ = kArpaNoWord;
  std::int32_t bos_ = kArpaNoWord;
  std::int32_t eos_ = kArpaNoWord;
  std::size_t num_missing_ = 0;
};

inline ArpaWordLM load_arpa(const std::filesystem::path& path, std::vector<std::string> vocab) {
  return ArpaWordLM(NgramModel::load(path), std::move(vocab));
}

/// Explicit conditional table: `history<TAB>word<TAB>prob`, `-` for the empty
/// history. Unknown histories back off by dropping their oldest word; the
/// empty history defaults to uniform. Within a row, unlisted vocabulary words
/// share the leftover mass equally.
class TableWordLM final : public WordLM {
 public:
  explicit TableWordLM(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    for (std::size_t r = 0; r < vocab_.size(); ++r) rank_.emplace(vocab_[r], static_cast<std::int32_t>(r));
  }

  static TableWordLM uniform(std::vector<std::string> vocab) { return TableWordLM(std::move(vocab)); }

  static TableWordLM parse(std::istream& in, std::vector<std::string> vocab, const std::string& source = "<table>") {
    TableWordLM lm(std::move(vocab));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
      if (cols.size() != 3) throw FormatError(source, line_no, "expected history<TAB>word<TAB>prob");
      double prob = 0.0;
      try {
        std::size_t used = 0;
        prob = std::stod(cols[2], &used);
        if (used != cols[2].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw FormatError(source, line_no, "non-numeric probability '" + cols[2] + "'");
      }
      if (!(prob >= 0.0 && prob <= 1.0)) throw FormatError(source, line_no, "probability outside [0,1]");
      WordHistory h;
      if (cols[0] != "-") {
        std::istringstream words(cols[0]);
        for (std::string w; words >> w;) h.words.push_back(lm.history_code(w));
      }
      lm.context_ = std::max(lm.context_, h.words.size());
      Row& row = lm.rows_[h];
      if (cols[1] == "</s>") {
        row.eos = prob;
      } else if (auto it = lm.rank_.find(cols[1]); it != lm.rank_.end()) {
        row.probs[it->second] = prob;
      }
    }
    return lm;
  }

  static TableWordLM load(const std::filesystem::path& path, std::vector<std::string> vocab) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open table LM " + path.string());
    return parse(in, std::move(vocab), path.string());
  }

  std::size_t vocab_size() const override { return vocab_.size(); }
  std::size_t context_size() const override { return context_; }

  WordDistribution full_distribution(const WordHistory& h) const override {
    const Row* row = find_row(h);
    WordDistribution p(vocab_.size(), 0.0);
    if (row == nullptr) {
      detail::renormalize(p);
      return p;
    }
    double listed = 0.0;
    for (const auto& [rank, prob] : row->probs) {
      p[static_cast<std::size_t>(rank)] = prob;
      listed += prob;
    }
    const std::size_t unlisted = vocab_.size() - row->probs.size();
    if (unlisted > 0) {
      const double share = std::max(0.0, 1.0 - listed - row->eos.value_or(0.0)) / static_cast<double>(unlisted);
      for (std::size_t r = 0; r < p.size(); ++r) {
        if (!row->probs.contains(static_cast<std::int32_t>(r))) p[r] = share;
      }
    }
    detail::renormalize(p);
    return p;
  }

  double end_of_sentence_prob(const WordHistory& h) const override {
    const Row* row = find_row(h);
    if (row == nullptr || !row->eos) return 1.0;
    return *row->eos;
  }

 private:
  struct Row {
    std::map<std::int32_t, double> probs;
    std::optional<double> eos;
  };

  std::int32_t history_code(const std::string& w) const {
    if (w == "<s>") return kSentenceStart;
    auto it = rank_.find(w);
    return it == rank_.end() ? kUnknownWord : it->second;
  }

  const Row* find_row(const WordHistory& h) const {
    WordHistory probe = h;
    while (true) {
      if (auto it = rows_.find(probe); it != rows_.end()) return &it->second;
      if (probe.words.empty()) return nullptr;
      probe.words.erase(probe.words.begin());
    }
  }

  std::vector<std::string> vocab_;
  std::map<std::string, std::int32_t> rank_;
  std::map<WordHistory, Row> rows_;
  std::size_t context_ = 0;
};

}  // namespace fused_beam
