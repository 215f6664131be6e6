#include "occlab/tasks.hpp"

#include <algorithm>
#include <string>

#include "occlab/errors.hpp"

namespace occlab {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::SumMod: return "summod";
    case TaskKind::CopyReverse: return "copyreverse";
  }
  return "?";
}

void Task::validate() const {
  if (vocab_size < 2) throw ConfigError("task.vocab_size must be >= 2");
  switch (name) {
    case TaskKind::SumMod:
      if (prompt_len != 2) throw ConfigError("SumMod prompts have exactly 2 tokens");
      if (response_len != 1) throw ConfigError("SumMod responses have exactly 1 token");
      break;
    case TaskKind::CopyReverse:
      if (prompt_len < 1) throw ConfigError("task.prompt_len must be >= 1");
      if (response_len != prompt_len) {
        throw ConfigError("CopyReverse needs response_len == prompt_len");
      }
      break;
  }
}

Task make_sum_mod(int vocab_size) { return Task{TaskKind::SumMod, vocab_size, 2, 1}; }

Task make_copy_reverse(int vocab_size, int length) {
  return Task{TaskKind::CopyReverse, vocab_size, length, length};
}

Tokens sample_prompt(const Task& task, Rng& rng) {
  task.validate();
  std::uniform_int_distribution<Token> tok(0, task.vocab_size - 1);
  Tokens prompt(static_cast<std::size_t>(task.prompt_len));
  for (Token& t : prompt) t = tok(rng);
  return prompt;
}

Tokens solution(const Task& task, std::span<const Token> prompt) {
  if (prompt.size() != static_cast<std::size_t>(task.prompt_len)) {
    throw InputError("prompt length " + std::to_string(prompt.size()) + ", task expects " +
                     std::to_string(task.prompt_len));
  }
  switch (task.name) {
    case TaskKind::SumMod:
      return {(prompt[0] + prompt[1]) % task.vocab_size};
    case TaskKind::CopyReverse:
      return Tokens(prompt.rbegin(), prompt.rend());
  }
  return {};
}

double verify(const Task& task, std::span<const Token> prompt, std::span<const Token> response) {
  if (response.size() != static_cast<std::size_t>(task.response_len)) {
    throw InputError("response length " + std::to_string(response.size()) + ", task expects " +
                     std::to_string(task.response_len));
  }
  const Tokens want = solution(task, prompt);
  return std::equal(want.begin(), want.end(), response.begin()) ? 1.0 : 0.0;
}

}  // namespace occlab
