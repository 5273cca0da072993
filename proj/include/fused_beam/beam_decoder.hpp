#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fused_beam/acoustic.hpp"
#include "fused_beam/coverage.hpp"
#include "fused_beam/errors.hpp"
#include "fused_beam/fusion.hpp"
#include "fused_beam/kaldi_io.hpp"
#include "fused_beam/token_dict.hpp"

namespace fused_beam {

enum class CoverageMode { kOff, kOriginal, kImproved };

struct DecodeConfig {
  std::size_t beam_size = 50;
  double lm_weight = 0.9;
  CoverageMode coverage_mode = CoverageMode::kOff;
  double coverage_weight = 0.01;
  double tau1 = 0.5;
  double tau2 = 1.0;
  double cov_margin = 0.7;
  std::optional<double> eos_gamma;
  double max_len_ratio = 1.0;
  TokenId eos_id = 1;
  TokenId pad_id = 0;  // never expanded; negative disables

  void validate() const {
    if (beam_size == 0) throw ContractError("beam size must be positive");
    if (!(lm_weight >= 0.0)) throw ContractError("LM weight must be non-negative");
    if (!(coverage_weight >= 0.0)) throw ContractError("coverage weight must be non-negative");
    if (coverage_mode == CoverageMode::kOriginal && !(tau1 >= 0.0)) throw ContractError("tau1 must be non-negative");
    if (coverage_mode == CoverageMode::kImproved && !(tau2 > tau1 && tau1 > 0.0)) {
      throw ContractError("improved coverage requires tau2 > tau1 > 0");
    }
    if (coverage_mode == CoverageMode::kImproved && !(cov_margin > 0.0)) {
      throw ContractError("coverage margin must be positive");
    }
    if (eos_gamma && !(*eos_gamma >= 0.0)) throw ContractError("EOS threshold gamma must be non-negative");
    if (!(max_len_ratio > 0.0)) throw ContractError("max length ratio must be positive");
    if (eos_id < 0) throw ContractError("eos id must be set");
  }
};

// Weighted coverage term for an accumulated-attention vector.
inline double coverage_term(std::span<const double> attn_accum, const DecodeConfig& config) {
  switch (config.coverage_mode) {
    case CoverageMode::kOff:
      return 0.0;
    case CoverageMode::kOriginal:
      return config.coverage_weight * coverage_original(attn_accum, config.tau1);
    case CoverageMode::kImproved:
      return config.coverage_weight * coverage_improved(attn_accum, config.tau1, config.tau2, config.cov_margin);
  }
  return 0.0;
}

// Decode-step cap: floor(max_len_ratio * encoder frames), at least one token.
inline std::size_t max_decode_length(std::size_t encoder_frames, double max_len_ratio) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(max_len_ratio * static_cast<double>(encoder_frames))));
}

// Total order used for every ranking: higher score first, then the
// lexicographically smaller token sequence (lower ids, then shorter).
inline bool ranks_before(double score_a, std::span<const TokenId> tokens_a, double score_b,
                         std::span<const TokenId> tokens_b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(tokens_a.begin(), tokens_a.end(), tokens_b.begin(), tokens_b.end());
}

// Attention rows consumed along one hypothesis, newest first.
struct AttentionTrail {
  std::vector<double> row;
  std::shared_ptr<const AttentionTrail> parent;
};

template <typename FusionState>
struct Hypothesis {
  std::vector<TokenId> tokens;
  double base_score = 0.0;  // sum of fused per-step scores
  double score = 0.0;       // base_score + weighted coverage of attn_accum
  FusionState fusion_state{};
  std::vector<double> attn_accum;
  std::shared_ptr<const AttentionTrail> trail;
  bool finished = false;
};

struct DecodeResult {
  std::string utt_id;
  std::vector<TokenId> tokens;  // ends in eos when finished
  double score = 0.0;
  bool finished = false;  // false: no hypothesis ended before the length cap
  std::vector<double> attn_accum;
  std::vector<std::vector<double>> attention;  // one row per emitted token
};

namespace detail {

template <typename FusionState>
DecodeResult to_result(const std::string& utt_id, const Hypothesis<FusionState>& h) {
  DecodeResult r{utt_id, h.tokens, h.score, h.finished, h.attn_accum, {}};
  for (const AttentionTrail* t = h.trail.get(); t != nullptr; t = t->parent.get()) r.attention.push_back(t->row);
  std::reverse(r.attention.begin(), r.attention.end());
  return r;
}

}  // namespace detail

/// Batched beam search with shallow fusion. Each step scores every live
/// hypothesis of every utterance in one fusion call, expands it by all tokens
/// (except pad, and eos when the threshold rejects it) with
/// am + lm_weight * lm, adds the coverage term recomputed from the new
/// accumulated attention, and keeps the best beam_size candidates per
/// utterance. Candidates ending in eos move to the finished set.
template <FusionModel F>
std::vector<DecodeResult> decode_batch(std::span<const FeatureMatrix> utterances, const AcousticScorer& scorer,
                                       const F& fusion, const DecodeConfig& config, bool apply_fusion = true) {
  using State = typename F::State;
  using Hyp = Hypothesis<State>;
  config.validate();
  const std::size_t vocab = scorer.vocab_size();
  if (apply_fusion && fusion.vocab_size() != vocab) {
    throw ContractError("fusion vocabulary (" + std::to_string(fusion.vocab_size()) +
                        ") does not match acoustic vocabulary (" + std::to_string(vocab) + ")");
  }
  if (static_cast<std::size_t>(config.eos_id) >= vocab) throw ContractError("eos id outside the vocabulary");

  struct Search {
    std::unique_ptr<AcousticSession> session;
    AcousticStep rows;
    std::vector<Hyp> live;
    std::vector<Hyp> finished;
    std::size_t frames = 0;
    std::size_t max_len = 0;
    bool done = false;
  };
  struct Candidate {
    double score;
    double base;
    std::size_t parent;
    TokenId token;
  };

  std::vector<Search> searches(utterances.size());
  for (std::size_t u = 0; u < utterances.size(); ++u) {
    const FeatureMatrix& feats = utterances[u];
    if (feats.empty()) throw ContractError("utterance '" + feats.utt_id + "' has an empty feature matrix");
    Search& s = searches[u];
    s.session = scorer.init(feats);
    s.frames = s.session->encoder_frames();
    s.max_len = max_decode_length(s.frames, config.max_len_ratio);
    Hyp init;
    init.fusion_state = fusion.initial_state();
    init.attn_accum.assign(s.frames, 0.0);
    init.score = coverage_term(init.attn_accum, config);
    s.live.push_back(std::move(init));
    s.rows = s.session->initial();
  }

  const bool coverage_on = config.coverage_mode != CoverageMode::kOff;
  for (std::size_t step = 1;; ++step) {
    std::vector<State> batch_states;
    for (const Search& s : searches) {
      if (s.done) continue;
      for (const Hyp& h : s.live) batch_states.push_back(h.fusion_state);
    }
    if (batch_states.empty()) break;
    ScoreMatrix lm;
    if (apply_fusion) lm = fusion.score(std::span<const State>(batch_states));

    std::vector<State> parent_states;
    std::vector<TokenId> chosen_tokens;
    std::vector<std::pair<std::size_t, std::size_t>> owners;  // (utterance, live index)
    std::size_t lm_row = 0;
    for (std::size_t u = 0; u < searches.size(); ++u) {
      Search& s = searches[u];
      if (s.done) continue;

      std::vector<std::vector<double>> next_attn(s.live.size());
      std::vector<Candidate> cands;
      for (std::size_t i = 0; i < s.live.size(); ++i, ++lm_row) {
        const Hyp& h = s.live[i];
        const auto am = s.rows.log_probs.row(i);
        const auto attn = s.rows.attention.row(i);
        next_attn[i] = h.attn_accum;
        for (std::size_t j = 0; j < s.frames; ++j) next_attn[i][j] += attn[j];
        const double cov = coverage_term(next_attn[i], config);
        const bool eos_ok = eos_allowed(am, config.eos_id, config.eos_gamma);
        for (std::size_t t = 0; t < vocab; ++t) {
          const auto tok = static_cast<TokenId>(t);
          if (tok == config.pad_id || (tok == config.eos_id && !eos_ok)) continue;
          const double fused = apply_fusion ? am[t] + config.lm_weight * lm(lm_row, t) : am[t];
          const double base = h.base_score + fused;
          cands.push_back({base + cov, base, i, tok});
        }
      }
      if (cands.empty()) {
        s.done = true;
        continue;
      }

      auto before = [&](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.parent != b.parent) return s.live[a.parent].tokens < s.live[b.parent].tokens;
        return a.token < b.token;
      };
      const std::size_t keep = std::min(config.beam_size, cands.size());
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), before);

      std::vector<Hyp> next_live;
      std::vector<std::size_t> parents;
      std::vector<TokenId> tokens;
      for (std::size_t c = 0; c < keep; ++c) {
        const Candidate& cand = cands[c];
        const Hyp& parent = s.live[cand.parent];
        Hyp child;
        child.tokens = parent.tokens;
        child.tokens.push_back(cand.token);
        child.base_score = cand.base;
        child.score = cand.score;
        child.attn_accum = next_attn[cand.parent];
        child.trail = std::make_shared<const AttentionTrail>(AttentionTrail{
            std::vector<double>(s.rows.attention.row(cand.parent).begin(), s.rows.attention.row(cand.parent).end()),
            parent.trail});
        if (cand.token == config.eos_id) {
          child.fusion_state = parent.fusion_state;
          child.finished = true;
          s.finished.push_back(std::move(child));
        } else {
          parents.push_back(cand.parent);
          tokens.push_back(cand.token);
          parent_states.push_back(parent.fusion_state);
          chosen_tokens.push_back(cand.token);
          owners.emplace_back(u, next_live.size());
          child.fusion_state = parent.fusion_state;
          next_live.push_back(std::move(child));
        }
      }
      std::sort(s.finished.begin(), s.finished.end(),
                [](const Hyp& a, const Hyp& b) { return ranks_before(a.score, a.tokens, b.score, b.tokens); });
      if (s.finished.size() > config.beam_size) s.finished.resize(config.beam_size);

      if (next_live.empty()) {
        s.live.clear();
        s.done = true;
        continue;
      }
      s.live = std::move(next_live);
      if (step >= s.max_len) {
        s.done = true;
        continue;
      }
      if (F::kNonPositiveScores && s.finished.size() >= config.beam_size) {
        const double best_base = std::max_element(s.live.begin(), s.live.end(), [](const Hyp& a, const Hyp& b) {
                                   return a.base_score < b.base_score;
                                 })->base_score;
        const double bound = best_base + (coverage_on ? config.coverage_weight * static_cast<double>(s.frames) : 0.0);
        if (bound < s.finished.back().score) {
          s.done = true;
          continue;
        }
      }
      s.rows = s.session->step(parents, tokens);
    }

    if (apply_fusion && !parent_states.empty()) {
      auto advanced = fusion.advance(std::span<const State>(parent_states), std::span<const TokenId>(chosen_tokens));
      for (std::size_t k = 0; k < owners.size(); ++k) {
        auto [u, idx] = owners[k];
        searches[u].live[idx].fusion_state = std::move(advanced[k]);
      }
    }
  }

  std::vector<DecodeResult> results;
  results.reserve(searches.size());
  for (std::size_t u = 0; u < searches.size(); ++u) {
    const Search& s = searches[u];
    if (!s.finished.empty()) {
      results.push_back(detail::to_result(utterances[u].utt_id, s.finished.front()));
      continue;
    }
    if (s.live.empty()) throw ContractError("utterance '" + utterances[u].utt_id + "' produced no hypothesis");
    auto best = std::min_element(s.live.begin(), s.live.end(), [](const Hyp& a, const Hyp& b) {
      return ranks_before(a.score, a.tokens, b.score, b.tokens);
    });
    results.push_back(detail::to_result(utterances[u].utt_id, *best));
  }
  return results;
}

// Acoustic-only decoding.
inline std::vector<DecodeResult> decode_batch(std::span<const FeatureMatrix> utterances, const AcousticScorer& scorer,
                                              const DecodeConfig& config) {
  NoFusion none{scorer.vocab_size()};
  return decode_batch(utterances, scorer, none, config, false);
}

}  // namespace fused_beam
