#pragma once

// Policy-gradient surrogates over a rollout batch.
//
// Every objective is a mean over responses of a mean over that response's
// tokens, with the sequence-level advantage broadcast to each token:
//   GRPO      J = 1/n sum_i A_i mean_t log pi(y_it)
//   DapoLite  J = 1/n sum_i mean_t min(r_it A_i, clip(r_it, 1-lo, 1+hi) A_i)
//   GspoLite  J = 1/n sum_i min(s_i A_i, clip(s_i, 1-lo, 1+hi) A_i),
//             s_i = exp(mean_t (log pi - log pi_old))
// The RL objective reads the main head; the MTP policy objective applies the
// same surrogate to the MTP head's realized-token log-probs. The MTP
// cross-entropy objective ignores rewards: J = 1/n sum_i mean_t log pi_mtp.
// All gradients are ascent directions.

#include <span>
#include <string_view>
#include <vector>

#include "occlab/batch.hpp"
#include "occlab/kernels.hpp"

namespace occlab {

enum class Algo { GRPO, DapoLite, GspoLite };

std::string_view to_string(Algo a);

struct AlgoConfig {
  Algo algo = Algo::GRPO;
  double clip_low = 0.2;
  double clip_high = 0.2;
  int ppo_epochs = 2;
  int micro_batches = 2;

  /// Defaults for an algorithm (clip-higher 0.28 for DapoLite).
  static AlgoConfig defaults_for(Algo algo);
  void validate() const;
  bool operator==(const AlgoConfig&) const = default;
};

enum class Objective { Rl, MtpPolicy, MtpCrossEntropy };

/// Surrogate: the algorithm's (possibly clipped) objective.
/// Plain: the unclipped GRPO form 1/n sum_i A_i mean_t log pi, whatever the algorithm.
/// Ratio: the unclipped token-level importance form 1/n sum_i A_i mean_t pi/pi_old.
///   Its gradient at pi = pi_old equals Plain's, but its Hessian keeps the
///   score outer products that Plain drops.
enum class Estimator { Surrogate, Plain, Ratio };

struct GradPair {
  ParamVector g_rl;
  ParamVector g_mtp;
  ParamVector g_ce;
};

/// Token weights of grad J at the log-probs held in `fwd`. The cross-entropy
/// objective ignores the estimator.
TokenWeights objective_weights(const RolloutBatch& batch, const BatchForward& fwd,
                               Objective objective, const AlgoConfig& algo, Estimator est);

/// Surrogate value on the responses in `indices`.
double objective_value(const ParamVector& params, const ModelConfig& config,
                       const RolloutBatch& batch, std::span<const std::size_t> indices,
                       Objective objective, const AlgoConfig& algo,
                       Estimator est = Estimator::Surrogate);

/// Gradients of several objectives from one forward pass over `indices`.
std::vector<ParamVector> objective_gradients(const ParamVector& params,
                                             const ModelConfig& config,
                                             const RolloutBatch& batch,
                                             std::span<const std::size_t> indices,
                                             std::span<const Objective> objectives,
                                             const AlgoConfig& algo, Estimator est,
                                             Exec exec = Exec::Parallel,
                                             ForwardCounter* counter = nullptr);

ParamVector rl_gradient(const ParamVector& params, const ModelConfig& config,
                        const RolloutBatch& batch, const AlgoConfig& algo);
ParamVector mtp_policy_gradient(const ParamVector& params, const ModelConfig& config,
                                const RolloutBatch& batch, const AlgoConfig& algo);
ParamVector ce_gradient(const ParamVector& params, const ModelConfig& config,
                        const RolloutBatch& batch);
GradPair batch_gradients(const ParamVector& params, const ModelConfig& config,
                         const RolloutBatch& batch, const AlgoConfig& algo);

/// u_i = mean_t grad log pi_head(y_it) for every response (MTP: over positions
/// with an MTP target).
std::vector<ParamVector> per_sample_gradients(const ParamVector& params,
                                              const ModelConfig& config,
                                              const RolloutBatch& batch, Head head);

/// Split of <g_RL, g_CE> for g_RL = 1/B sum A_i u_i and g_CE = 1/B sum w_j:
///   diagonal = 1/B^2 sum_i A_i <u_i, w_i>
///   cross    = 1/B^2 sum_{i != j} A_i <u_i, w_j>
struct CeDecomposition {
  double diagonal = 0.0;
  double cross = 0.0;
};

CeDecomposition ce_diagonal_decomposition(std::span<const std::vector<double>> rl_grads,
                                          std::span<const std::vector<double>> ce_grads,
                                          std::span<const double> advantages);

/// Single-policy form: the same u_i feeds both estimators.
CeDecomposition ce_diagonal_decomposition(std::span<const std::vector<double>> grads,
                                          std::span<const double> advantages);

}  // namespace occlab
