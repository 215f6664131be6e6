#include "occlab/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "occlab/errors.hpp"
#include "occlab/vec_ops.hpp"

namespace occlab {

std::string_view to_string(Algo a) {
  switch (a) {
    case Algo::GRPO: return "grpo";
    case Algo::DapoLite: return "dapo";
    case Algo::GspoLite: return "gspo";
  }
  return "?";
}

AlgoConfig AlgoConfig::defaults_for(Algo algo) {
  AlgoConfig c;
  c.algo = algo;
  c.clip_low = 0.2;
  c.clip_high = algo == Algo::DapoLite ? 0.28 : 0.2;
  return c;
}

void AlgoConfig::validate() const {
  if (!(clip_low > 0.0 && clip_low <= clip_high && clip_high < 1.0)) {
    throw ConfigError("need 0 < algo.clip_low <= algo.clip_high < 1");
  }
  if (ppo_epochs < 1) throw ConfigError("algo.ppo_epochs must be >= 1");
  if (micro_batches < 1) throw ConfigError("algo.micro_batches must be >= 1");
}

namespace {

// Whether the unclipped branch of min(x A, clip(x) A) is the active one. At
// the band edge both branches agree and the unclipped gradient is used.
bool ratio_active(double ratio, double adv, const AlgoConfig& algo) {
  if (adv > 0.0) return ratio <= 1.0 + algo.clip_high;
  if (adv < 0.0) return ratio >= 1.0 - algo.clip_low;
  return false;
}

double clipped_term(double ratio, double adv, const AlgoConfig& algo) {
  const double clipped = std::clamp(ratio, 1.0 - algo.clip_low, 1.0 + algo.clip_high);
  return std::min(ratio * adv, clipped * adv);
}

struct TokenView {
  std::span<const double> logp;  // current
  std::span<const double> old;
  std::size_t offset = 0;        // response position of logp[0]
};

TokenView view_for(const RolloutBatch& batch, std::size_t i, const SequenceForward& sf,
                   Objective objective) {
  const TokenLogProbs& old = batch.old_logprobs[i];
  if (objective == Objective::Rl) return {sf.main_logp, old.main, 0};
  if (old.mtp.size() != sf.mtp_logp.size()) {
    throw InputError("old MTP log-probs do not match the response");
  }
  return {sf.mtp_logp, old.mtp, sf.mtp_offset};
}

}  // namespace

TokenWeights objective_weights(const RolloutBatch& batch, const BatchForward& fwd,
                               Objective objective, const AlgoConfig& algo, Estimator est) {
  TokenWeights w = TokenWeights::zeros_for(fwd);
  const double n = static_cast<double>(fwd.seqs.size());
  for (std::size_t s = 0; s < fwd.seqs.size(); ++s) {
    const std::size_t i = fwd.indices[s];
    const TokenView tv = view_for(batch, i, fwd.seqs[s], objective);
    if (tv.logp.empty()) continue;
    const double len = static_cast<double>(tv.logp.size());
    auto& dst = objective == Objective::Rl ? w.main[s] : w.mtp[s];

    if (objective == Objective::MtpCrossEntropy) {
      for (std::size_t t = 0; t < tv.logp.size(); ++t) dst[tv.offset + t] = 1.0 / (n * len);
      continue;
    }

    const double adv = batch.advantages[i];
    if (est == Estimator::Plain || (est == Estimator::Surrogate && algo.algo == Algo::GRPO)) {
      for (std::size_t t = 0; t < tv.logp.size(); ++t) dst[tv.offset + t] = adv / (n * len);
    } else if (est == Estimator::Ratio) {
      if (tv.old.size() != tv.logp.size()) throw InputError("old log-probs do not match");
      for (std::size_t t = 0; t < tv.logp.size(); ++t) {
        dst[tv.offset + t] = adv * std::exp(tv.logp[t] - tv.old[t]) / (n * len);
      }
    } else if (algo.algo == Algo::DapoLite) {
      if (tv.old.size() != tv.logp.size()) throw InputError("old log-probs do not match");
      for (std::size_t t = 0; t < tv.logp.size(); ++t) {
        const double ratio = std::exp(tv.logp[t] - tv.old[t]);
        dst[tv.offset + t] = ratio_active(ratio, adv, algo) ? adv * ratio / (n * len) : 0.0;
      }
    } else {
      if (tv.old.size() != tv.logp.size()) throw InputError("old log-probs do not match");
      double mean_log_ratio = 0.0;
      for (std::size_t t = 0; t < tv.logp.size(); ++t) mean_log_ratio += tv.logp[t] - tv.old[t];
      const double ratio = std::exp(mean_log_ratio / len);
      const double coef = ratio_active(ratio, adv, algo) ? adv * ratio / (n * len) : 0.0;
      for (std::size_t t = 0; t < tv.logp.size(); ++t) dst[tv.offset + t] = coef;
    }
  }
  return w;
}

double objective_value(const ParamVector& params, const ModelConfig& config,
                       const RolloutBatch& batch, std::span<const std::size_t> indices,
                       Objective objective, const AlgoConfig& algo, Estimator est) {
  const BatchForward fwd = kernels::forward_batch(params, config, batch, indices, Exec::Serial);
  double total = 0.0;
  for (std::size_t s = 0; s < fwd.seqs.size(); ++s) {
    const std::size_t i = fwd.indices[s];
    const TokenView tv = view_for(batch, i, fwd.seqs[s], objective);
    if (tv.logp.empty()) continue;
    const double len = static_cast<double>(tv.logp.size());
    const double adv = batch.advantages[i];
    double seq_term = 0.0;
    if (objective == Objective::MtpCrossEntropy) {
      for (double lp : tv.logp) seq_term += lp / len;
    } else if (est == Estimator::Plain || (est == Estimator::Surrogate && algo.algo == Algo::GRPO)) {
      for (double lp : tv.logp) seq_term += adv * lp / len;
    } else if (est == Estimator::Ratio) {
      for (std::size_t t = 0; t < tv.logp.size(); ++t) {
        seq_term += adv * std::exp(tv.logp[t] - tv.old[t]) / len;
      }
    } else if (algo.algo == Algo::DapoLite) {
      for (std::size_t t = 0; t < tv.logp.size(); ++t) {
        seq_term += clipped_term(std::exp(tv.logp[t] - tv.old[t]), adv, algo) / len;
      }
    } else {
      double mean_log_ratio = 0.0;
      for (std::size_t t = 0; t < tv.logp.size(); ++t) mean_log_ratio += tv.logp[t] - tv.old[t];
      seq_term = clipped_term(std::exp(mean_log_ratio / len), adv, algo);
    }
    total += seq_term;
  }
  return indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
}

std::vector<ParamVector> objective_gradients(const ParamVector& params,
                                             const ModelConfig& config,
                                             const RolloutBatch& batch,
                                             std::span<const std::size_t> indices,
                                             std::span<const Objective> objectives,
                                             const AlgoConfig& algo, Estimator est, Exec exec,
                                             ForwardCounter* counter) {
  const BatchForward fwd = kernels::forward_batch(params, config, batch, indices, exec, counter);
  std::vector<TokenWeights> weights;
  weights.reserve(objectives.size());
  for (Objective o : objectives) weights.push_back(objective_weights(batch, fwd, o, algo, est));
  return kernels::backward_batch(params, config, batch, fwd, weights, exec);
}

namespace {

ParamVector single(const ParamVector& params, const ModelConfig& config,
                   const RolloutBatch& batch, Objective o, const AlgoConfig& algo) {
  batch.validate();
  const auto idx = batch.all_indices();
  const Objective objs[] = {o};
  return std::move(objective_gradients(params, config, batch, idx, objs, algo, Estimator::Surrogate)[0]);
}

}  // namespace

ParamVector rl_gradient(const ParamVector& params, const ModelConfig& config,
                        const RolloutBatch& batch, const AlgoConfig& algo) {
  return single(params, config, batch, Objective::Rl, algo);
}

ParamVector mtp_policy_gradient(const ParamVector& params, const ModelConfig& config,
                                const RolloutBatch& batch, const AlgoConfig& algo) {
  return single(params, config, batch, Objective::MtpPolicy, algo);
}

ParamVector ce_gradient(const ParamVector& params, const ModelConfig& config,
                        const RolloutBatch& batch) {
  return single(params, config, batch, Objective::MtpCrossEntropy, AlgoConfig{});
}

GradPair batch_gradients(const ParamVector& params, const ModelConfig& config,
                         const RolloutBatch& batch, const AlgoConfig& algo) {
  batch.validate();
  const auto idx = batch.all_indices();
  const Objective objs[] = {Objective::Rl, Objective::MtpPolicy, Objective::MtpCrossEntropy};
  auto g = objective_gradients(params, config, batch, idx, objs, algo, Estimator::Surrogate);
  return {std::move(g[0]), std::move(g[1]), std::move(g[2])};
}

std::vector<ParamVector> per_sample_gradients(const ParamVector& params,
                                              const ModelConfig& config,
                                              const RolloutBatch& batch, Head head) {
  batch.validate();
  std::vector<ParamVector> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t one[] = {i};
    const BatchForward fwd = kernels::forward_batch(params, config, batch, one, Exec::Serial);
    TokenWeights w = TokenWeights::zeros_for(fwd);
    const SequenceForward& sf = fwd.seqs[0];
    if (head == Head::Main) {
      const double len = static_cast<double>(sf.main_logp.size());
      for (double& x : w.main[0]) x = 1.0 / len;
    } else if (!sf.mtp_logp.empty()) {
      const double len = static_cast<double>(sf.mtp_logp.size());
      for (std::size_t r = sf.mtp_offset; r < w.mtp[0].size(); ++r) w.mtp[0][r] = 1.0 / len;
    }
    const TokenWeights ws[] = {std::move(w)};
    out.push_back(std::move(kernels::backward_batch(params, config, batch, fwd, ws, Exec::Serial)[0]));
  }
  return out;
}

CeDecomposition ce_diagonal_decomposition(std::span<const std::vector<double>> rl_grads,
                                          std::span<const std::vector<double>> ce_grads,
                                          std::span<const double> advantages) {
  const std::size_t b = rl_grads.size();
  if (ce_grads.size() != b || advantages.size() != b) {
    throw InputError("ce_diagonal_decomposition: B mismatch between gradients and advantages");
  }
  if (b == 0) return {};
  const std::size_t dim = rl_grads[0].size();

  // sum_{i != j} A_i <u_i, w_j> = <sum_i A_i u_i, sum_j w_j> - sum_i A_i <u_i, w_i>
  std::vector<double> weighted(dim, 0.0), total(dim, 0.0);
  double diag = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    vec::axpy(advantages[i], rl_grads[i], weighted);
    vec::axpy(1.0, ce_grads[i], total);
    diag += advantages[i] * vec::dot(rl_grads[i], ce_grads[i]);
  }
  const double bb = static_cast<double>(b) * static_cast<double>(b);
  CeDecomposition out;
  out.diagonal = diag / bb;
  out.cross = b == 1 ? 0.0 : (vec::dot(weighted, total) - diag) / bb;
  return out;
}

CeDecomposition ce_diagonal_decomposition(std::span<const std::vector<double>> grads,
                                          std::span<const double> advantages) {
  return ce_diagonal_decomposition(grads, grads, advantages);
}

}  // namespace occlab
