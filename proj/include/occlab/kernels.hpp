#pragma once

// Batch kernels. Every kernel has a serial reference and an OpenMP version;
// the public operations use Exec::Parallel and the tests hold the two
// implementations against each other.
//
// The parallel backward pass reduces over fixed-size blocks of sequences in a
// fixed order, so its result does not depend on the thread count.

#include <cstdint>
#include <span>
#include <vector>

#include "occlab/batch.hpp"
#include "occlab/param_vector.hpp"
#include "occlab/policy.hpp"

namespace occlab {

enum class Exec { Serial, Parallel };

/// Counts model forward passes in units of whole sequences: one sampled
/// response, or one evaluation of every response position of a sequence.
struct ForwardCounter {
  std::uint64_t sequences = 0;
  void add(std::uint64_t n) { sequences += n; }
};

inline void count(ForwardCounter* c, std::uint64_t n) {
  if (c != nullptr) c->add(n);
}

struct SequenceForward {
  std::vector<detail::PositionState> positions;  // one per response position
  std::vector<double> main_logp;                 // realized tokens
  std::vector<double> mtp_logp;                  // realized tokens, r >= mtp_offset
  std::size_t mtp_offset = 0;
};

struct BatchForward {
  std::vector<std::size_t> indices;  // batch indices, in evaluation order
  std::vector<SequenceForward> seqs;
};

/// Per-token gradient weights for a weighted sum of realized-token log-prob
/// gradients. main[s][r] and mtp[s][r] are indexed by local sequence s and
/// response position r; MTP weights before the sequence's mtp_offset must be 0.
struct TokenWeights {
  std::vector<std::vector<double>> main;
  std::vector<std::vector<double>> mtp;

  static TokenWeights zeros_for(const BatchForward& fwd);
};

namespace kernels {

inline constexpr std::size_t kReduceBlock = 8;

BatchForward forward_batch(const ParamVector& params, const ModelConfig& config,
                           const RolloutBatch& batch, std::span<const std::size_t> indices,
                           Exec exec, ForwardCounter* counter = nullptr);

/// One gradient per weight set: sum over sequences and positions of
/// w_main * grad log pi_main + w_mtp * grad log pi_mtp at the realized tokens.
std::vector<ParamVector> backward_batch(const ParamVector& params, const ModelConfig& config,
                                        const RolloutBatch& batch, const BatchForward& fwd,
                                        std::span<const TokenWeights> weights, Exec exec);

/// Realized main-head log-probs of every response position, per sequence.
std::vector<std::vector<double>> main_logprobs(const ParamVector& params,
                                               const ModelConfig& config,
                                               const RolloutBatch& batch,
                                               std::span<const std::size_t> indices, Exec exec,
                                               ForwardCounter* counter = nullptr);

/// Samples one response per prompt; response i draws from its own stream
/// seeded with seeds[i].
std::vector<SampledResponse> sample_responses(const ParamVector& params,
                                              const ModelConfig& config,
                                              std::span<const Tokens> prompts,
                                              std::size_t response_len, double temperature,
                                              std::span<const std::uint64_t> seeds, Exec exec,
                                              ForwardCounter* counter = nullptr);

}  // namespace kernels
}  // namespace occlab
