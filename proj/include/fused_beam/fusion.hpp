#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "fused_beam/score_matrix.hpp"
#include "fused_beam/token_dict.hpp"

namespace fused_beam {

/// What the beam decoder needs from an external LM: a per-hypothesis state
/// value, batched scoring over the token dictionary (natural log), and batched
/// state advancement by the chosen tokens.
template <typename F>
concept FusionModel = requires(const F& f, std::span<const typename F::State> states,
                               std::span<const TokenId> tokens) {
  typename F::State;
  { F::kNonPositiveScores } -> std::convertible_to<bool>;
  { f.vocab_size() } -> std::convertible_to<std::size_t>;
  { f.initial_state() } -> std::same_as<typename F::State>;
  { f.score(states) } -> std::same_as<ScoreMatrix>;
  { f.advance(states, tokens) } -> std::same_as<std::vector<typename F::State>>;
};

// Acoustic-only decoding.
struct NoFusion {
  struct State {
    bool operator==(const State&) const = default;
  };
  static constexpr bool kNonPositiveScores = true;

  std::size_t vocab = 0;

  std::size_t vocab_size() const { return vocab; }
  State initial_state() const { return {}; }
  ScoreMatrix score(std::span<const State> states) const { return ScoreMatrix(states.size(), vocab, 0.0); }
  std::vector<State> advance(std::span<const State> states, std::span<const TokenId>) const {
    return {states.begin(), states.end()};
  }
};

}  // namespace fused_beam
