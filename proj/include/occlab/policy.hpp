#pragma once

// Tiny differentiable sequence policy with a main next-token head and a
// depth-1 multi-token-prediction (MTP) head.
//
// Both backends condition on the last two visible tokens. The MTP head follows
// the teacher-forced layout of modern MTP modules: issued at position t it
// predicts s[t+2] from the trunk features of the context s[..t] extended by the
// realized s[t+1]. For a target index k that means the main head and the MTP
// head read the same visible tokens s[..k-1] through different heads, and the
// MTP target exists whenever k >= 2.
//
// TabularSoftmax: three logit tables indexed by the (prev, last) key,
//   main logits = trunk[key] + main_head[key]
//   mtp  logits = trunk[key] + mtp_head[key]
// TinyMLP: one-hot(prev) ++ one-hot(last) -> tanh hidden layer (trunk), then
// two linear heads.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "occlab/param_vector.hpp"

namespace occlab {

using Token = int;
using Tokens = std::vector<Token>;
using Rng = std::mt19937_64;

enum class Backend { TabularSoftmax, TinyMLP };
enum class Head { Main, Mtp };

std::string_view to_string(Backend b);

inline constexpr std::size_t kMaxParams = 100000;

struct ModelConfig {
  int vocab_size = 16;
  int context_window = 8;  // longest prompt + response the model accepts
  int hidden_dim = 32;     // TinyMLP only
  Backend backend = Backend::TabularSoftmax;
  int mtp_depth = 1;

  void validate() const;
  ParamLayout layout() const;
  std::size_t param_count() const { return layout().total(); }
  bool operator==(const ModelConfig&) const = default;
};

/// The two conditioning tokens. `prev` is negative when the context holds a
/// single token.
struct FeatureKey {
  Token prev = -1;
  Token last = 0;
};

/// Key used to predict s[k] from s[..k-1]; requires 1 <= k <= seq.size().
FeatureKey key_for_target(std::span<const Token> seq, std::size_t k);

/// Log-distributions over the vocabulary for both heads.
struct HeadDistributions {
  std::vector<double> main;
  std::vector<double> mtp;
};

/// Realized-token log-probs of one response.
struct TokenLogProbs {
  std::vector<double> main;  // one per response position
  std::vector<double> mtp;   // response positions with an MTP target
  std::vector<bool> mask;    // full sequence; true on response positions
  std::size_t mtp_offset = 0;  // response positions lacking an MTP target

  std::size_t response_len() const { return main.size(); }
  /// MTP log-prob of response position r, r >= mtp_offset.
  double mtp_at(std::size_t r) const { return mtp[r - mtp_offset]; }
};

/// Number of leading response positions whose MTP target does not exist.
std::size_t mtp_offset_for(std::size_t prompt_len);

ParamVector init_params(const ModelConfig& config, std::uint64_t seed);

HeadDistributions forward_logprobs(const ParamVector& params, const ModelConfig& config,
                                   std::span<const Token> context);

struct SampledResponse {
  Tokens tokens;
  TokenLogProbs logprobs;
};

/// Autoregressive sampling from the main head. temperature == 0 selects the
/// argmax (greedy) limit. Recorded log-probs are those of the untempered
/// policy, for both heads.
SampledResponse sample_sequence(const ParamVector& params, const ModelConfig& config,
                                std::span<const Token> prompt, std::size_t max_len,
                                double temperature, Rng& rng);

TokenLogProbs realized_logprobs(const ParamVector& params, const ModelConfig& config,
                                std::span<const Token> prompt, std::span<const Token> response);

/// Exact gradient of log pi_head(s[position] | s[..position-1]) where
/// `position` indexes the full prompt ++ response sequence.
ParamVector grad_logprob(const ParamVector& params, const ModelConfig& config,
                         std::span<const Token> prompt, std::span<const Token> response,
                         Head head, std::size_t position);

namespace detail {

/// Cached activations of one position, enough to backpropagate through it.
struct PositionState {
  FeatureKey key;
  std::vector<double> hidden;     // TinyMLP only
  std::vector<double> main_logp;  // full log-distribution
  std::vector<double> mtp_logp;
};

void check_tokens(const ModelConfig& config, std::span<const Token> tokens);

void evaluate(const ParamVector& params, const ModelConfig& config, FeatureKey key,
              PositionState& out);

/// Main-head log-distribution only (skips the MTP head).
void evaluate_main(const ParamVector& params, const ModelConfig& config, FeatureKey key,
                   PositionState& out);

/// grad += J^T [dmain; dmtp], where J is the Jacobian of the two heads'
/// logits. Either adjoint may be empty.
void backprop(const ParamVector& params, const ModelConfig& config, const PositionState& state,
              std::span<const double> dmain, std::span<const double> dmtp,
              std::span<double> grad);

/// grad += w_main * d log pi_main(target) + w_mtp * d log pi_mtp(target).
void add_logprob_grad(const ParamVector& params, const ModelConfig& config,
                      const PositionState& state, Token target, double w_main, double w_mtp,
                      std::span<double> grad, std::vector<double>& scratch);

void log_softmax_inplace(std::span<double> logits);

}  // namespace detail
}  // namespace occlab
