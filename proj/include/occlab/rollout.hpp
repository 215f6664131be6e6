#pragma once

#include <span>
#include <vector>

#include "occlab/batch.hpp"
#include "occlab/kernels.hpp"
#include "occlab/tasks.hpp"

namespace occlab {

/// Groups whose reward spread falls below this are treated as degenerate.
inline constexpr double kDegenerateStd = 1e-8;

/// A_i = (r_i - mean) / std with the population std; all zeros when the group
/// is degenerate (every sample then contributes nothing).
std::vector<double> group_advantages(std::span<const double> rewards);

/// Samples B / G prompts and G responses per prompt from the current policy,
/// verifies them and fills advantages and old log-probs. Prompts are drawn
/// from `rng` first; each response then gets its own stream seeded from `rng`,
/// so the result does not depend on how the sampling is scheduled.
RolloutBatch collect_rollouts(const ParamVector& params, const ModelConfig& config,
                              const Task& task, std::size_t batch, std::size_t group,
                              double temperature, Rng& rng, Exec exec = Exec::Parallel,
                              ForwardCounter* counter = nullptr);

}  // namespace occlab
