#pragma once

#include <cstddef>
#include <vector>

#include "occlab/policy.hpp"

namespace occlab {

/// Rollouts for B/G prompts with G sampled responses each. Response i belongs
/// to prompt i / G.
struct RolloutBatch {
  std::size_t group_size = 0;
  std::vector<Tokens> prompts;
  std::vector<Tokens> responses;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<TokenLogProbs> old_logprobs;

  std::size_t size() const { return responses.size(); }
  const Tokens& prompt_of(std::size_t i) const { return prompts[i / group_size]; }
  Tokens sequence(std::size_t i) const;
  std::vector<std::size_t> all_indices() const;

  /// Shape checks: |responses| = |prompts| * G and per-response arrays agree.
  void validate() const;
};

}  // namespace occlab
