#include "occlab/rollout.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "occlab/errors.hpp"

namespace occlab {

Tokens RolloutBatch::sequence(std::size_t i) const {
  Tokens seq = prompt_of(i);
  seq.insert(seq.end(), responses[i].begin(), responses[i].end());
  return seq;
}

std::vector<std::size_t> RolloutBatch::all_indices() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

void RolloutBatch::validate() const {
  if (group_size == 0) throw InputError("rollout batch has group_size 0");
  if (responses.size() != prompts.size() * group_size) {
    throw InputError("rollout batch: " + std::to_string(responses.size()) +
                     " responses for " + std::to_string(prompts.size()) + " prompts of group " +
                     std::to_string(group_size));
  }
  if (rewards.size() != size() || advantages.size() != size() || old_logprobs.size() != size()) {
    throw InputError("rollout batch: per-response arrays disagree in length");
  }
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw InputError("group_advantages needs at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);

  std::vector<double> adv(rewards.size(), 0.0);
  if (sd < kDegenerateStd) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

RolloutBatch collect_rollouts(const ParamVector& params, const ModelConfig& config,
                              const Task& task, std::size_t batch, std::size_t group,
                              double temperature, Rng& rng, Exec exec, ForwardCounter* counter) {
  if (group < 2) throw InputError("collect_rollouts: group size must be >= 2");
  if (batch == 0 || batch % group != 0) {
    throw InputError("collect_rollouts: batch " + std::to_string(batch) +
                     " is not a positive multiple of group " + std::to_string(group));
  }
  task.validate();
  if (task.vocab_size != config.vocab_size) {
    throw InputError("task and model disagree on vocab_size");
  }

  RolloutBatch out;
  out.group_size = group;
  const std::size_t n_prompts = batch / group;
  for (std::size_t p = 0; p < n_prompts; ++p) out.prompts.push_back(sample_prompt(task, rng));

  std::vector<Tokens> per_response(batch);
  std::vector<std::uint64_t> seeds(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    per_response[i] = out.prompts[i / group];
    seeds[i] = rng();
  }
  std::vector<SampledResponse> sampled =
      kernels::sample_responses(params, config, per_response,
                                static_cast<std::size_t>(task.response_len), temperature, seeds,
                                exec, counter);

  out.responses.reserve(batch);
  out.rewards.reserve(batch);
  out.old_logprobs.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    out.rewards.push_back(verify(task, per_response[i], sampled[i].tokens));
    out.responses.push_back(std::move(sampled[i].tokens));
    out.old_logprobs.push_back(std::move(sampled[i].logprobs));
  }
  out.advantages.reserve(batch);
  for (std::size_t p = 0; p < n_prompts; ++p) {
    const auto adv = group_advantages(std::span<const double>(out.rewards).subspan(p * group, group));
    out.advantages.insert(out.advantages.end(), adv.begin(), adv.end());
  }
  return out;
}

}  // namespace occlab
