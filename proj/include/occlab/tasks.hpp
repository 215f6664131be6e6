#pragma once

#include <span>
#include <string_view>

#include "occlab/policy.hpp"

namespace occlab {

enum class TaskKind { SumMod, CopyReverse };

std::string_view to_string(TaskKind k);

/// Synthetic prompt distribution with a binary verifier.
///   SumMod:      prompt [a, b], reward 1 iff response[0] == (a + b) mod vocab.
///   CopyReverse: reward 1 iff the response is the prompt reversed.
struct Task {
  TaskKind name = TaskKind::SumMod;
  int vocab_size = 16;
  int prompt_len = 2;
  int response_len = 1;

  void validate() const;
  bool operator==(const Task&) const = default;
};

Task make_sum_mod(int vocab_size = 16);
Task make_copy_reverse(int vocab_size, int length);

/// Uniform over the task's prompt space.
Tokens sample_prompt(const Task& task, Rng& rng);

/// Pure verifier; returns 0.0 or 1.0.
double verify(const Task& task, std::span<const Token> prompt, std::span<const Token> response);

/// The unique rewarded response for a prompt.
Tokens solution(const Task& task, std::span<const Token> prompt);

}  // namespace occlab
