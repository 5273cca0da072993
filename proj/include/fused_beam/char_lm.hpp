#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fused_beam/arpa.hpp"
#include "fused_beam/token_dict.hpp"

namespace fused_beam {

// Log score given to tokens a model cannot produce (e.g. `<pad>`).
inline constexpr double kScoreFloor = -30.0;

/// Subword-level LM over the token dictionary. Rows are natural-log
/// probabilities over all tokens, normalized over every token except `<pad>`.
class CharLM {
 public:
  virtual ~CharLM() = default;
  virtual std::size_t vocab_size() const = 0;
  // Tokens of history consulted per prediction.
  virtual std::size_t context_size() const = 0;
  virtual std::vector<double> log_probs(std::span<const TokenId> history) const = 0;
};

class UniformCharLM final : public CharLM {
 public:
  explicit UniformCharLM(const TokenDictionary& dict) : size_(dict.size()), pad_(dict.pad_id()) {}

  std::size_t vocab_size() const override { return size_; }
  std::size_t context_size() const override { return 0; }

  std::vector<double> log_probs(std::span<const TokenId>) const override {
    std::vector<double> row(size_, -std::log(static_cast<double>(size_ - 1)));
    row[static_cast<std::size_t>(pad_)] = kScoreFloor;
    return row;
  }

 private:
  std::size_t size_;
  TokenId pad_;
};

/// ARPA n-gram over tokens. `<eos>` maps to `</s>`, the sentence start to
/// `<s>`; tokens absent from the model take the `<unk>` probability.
class ArpaCharLM final : public CharLM {
 public:
  ArpaCharLM(NgramModel model, const TokenDictionary& dict) : model_(std::move(model)), pad_(dict.pad_id()) {
    const auto unk = model_.word_id("<unk>").value_or(kArpaNoWord);
    bos_ = model_.word_id("<s>").value_or(kArpaNoWord);
    for (TokenId t = 0; t < static_cast<TokenId>(dict.size()); ++t) {
      const std::string& tok = t == dict.eos_id() ? std::string("</s>") : dict.token_of(t);
      ids_.push_back(model_.word_id(tok).value_or(unk));
    }
  }

  std::size_t vocab_size() const override { return ids_.size(); }
  std::size_t context_size() const override { return static_cast<std::size_t>(model_.order() - 1); }

  std::vector<double> log_probs(std::span<const TokenId> history) const override {
    std::vector<std::int32_t> ctx;
    const std::size_t keep = context_size();
    if (history.size() < keep) ctx.push_back(bos_);
    const std::size_t from = history.size() > keep ? history.size() - keep : 0;
    for (std::size_t i = from; i < history.size(); ++i) ctx.push_back(ids_.at(static_cast<std::size_t>(history[i])));

    std::vector<double> prob(ids_.size(), 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < ids_.size(); ++t) {
      if (static_cast<TokenId>(t) == pad_ || ids_[t] == kArpaNoWord) continue;
      prob[t] = std::pow(10.0, model_.log10_prob(ctx, ids_[t]));
      total += prob[t];
    }
    std::vector<double> row(ids_.size(), kScoreFloor);
    for (std::size_t t = 0; t < ids_.size(); ++t) {
      if (prob[t] > 0.0 && total > 0.0) row[t] = std::max(kScoreFloor, std::log(prob[t] / total));
    }
    return row;
  }

 private:
  NgramModel model_;
  TokenId pad_;
  std::int32_t bos_ = kArpaNoWord;
  std::vector<std::int32_t> ids_;
};

}  // namespace fused_beam
