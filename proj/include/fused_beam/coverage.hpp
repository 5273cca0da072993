#pragma once

#include <algorithm>
#include <optional>
#include <span>

#include "fused_beam/token_dict.hpp"

namespace fused_beam {

// Number of encoder frames whose accumulated attention exceeds tau.
inline double coverage_original(std::span<const double> attn_accum, double tau) {
  return static_cast<double>(std::count_if(attn_accum.begin(), attn_accum.end(), [tau](double a) { return a > tau; }));
}

// Frames above tau1 count +1; frames above tau2 additionally lose
// (margin + acc - tau2), pushing accumulated attention back below tau2.
inline double coverage_improved(std::span<const double> attn_accum, double tau1, double tau2, double margin) {
  double total = 0.0;
  for (double a : attn_accum) {
    if (a > tau1) total += 1.0;
    if (a > tau2) total -= margin + a - tau2;
  }
  return total;
}

// End-of-sentence threshold: `<eos>` may be emitted only when its log
// probability beats gamma times the best log probability in the row (which
// includes `<eos>` itself). No gamma disables the check.
inline bool eos_allowed(std::span<const double> log_probs, TokenId eos_id, std::optional<double> gamma) {
  if (!gamma) return true;
  const double best = *std::max_element(log_probs.begin(), log_probs.end());
  return log_probs[static_cast<std::size_t>(eos_id)] > *gamma * best;
}

}  // namespace fused_beam
