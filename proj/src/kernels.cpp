#include "occlab/kernels.hpp"

#include <omp.h>

#include <algorithm>

#include "occlab/errors.hpp"

namespace occlab {

TokenWeights TokenWeights::zeros_for(const BatchForward& fwd) {
  TokenWeights w;
  w.main.resize(fwd.seqs.size());
  w.mtp.resize(fwd.seqs.size());
  for (std::size_t s = 0; s < fwd.seqs.size(); ++s) {
    w.main[s].assign(fwd.seqs[s].positions.size(), 0.0);
    w.mtp[s].assign(fwd.seqs[s].positions.size(), 0.0);
  }
  return w;
}

namespace kernels {
namespace {

SequenceForward forward_one(const ParamVector& params, const ModelConfig& config,
                            const RolloutBatch& batch, std::size_t i) {
  const Tokens& prompt = batch.prompt_of(i);
  const Tokens seq = batch.sequence(i);
  SequenceForward out;
  out.mtp_offset = std::min(mtp_offset_for(prompt.size()), batch.responses[i].size());
  out.positions.resize(batch.responses[i].size());
  for (std::size_t r = 0; r < out.positions.size(); ++r) {
    const std::size_t k = prompt.size() + r;
    detail::PositionState& st = out.positions[r];
    detail::evaluate(params, config, key_for_target(seq, k), st);
    const auto y = static_cast<std::size_t>(seq[k]);
    out.main_logp.push_back(st.main_logp[y]);
    if (r >= out.mtp_offset) out.mtp_logp.push_back(st.mtp_logp[y]);
  }
  return out;
}

std::vector<double> main_logprobs_one(const ParamVector& params, const ModelConfig& config,
                                      const RolloutBatch& batch, std::size_t i,
                                      detail::PositionState& st) {
  const Tokens& prompt = batch.prompt_of(i);
  const Tokens seq = batch.sequence(i);
  std::vector<double> out(batch.responses[i].size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const std::size_t k = prompt.size() + r;
    detail::evaluate_main(params, config, key_for_target(seq, k), st);
    out[r] = st.main_logp[static_cast<std::size_t>(seq[k])];
  }
  return out;
}

// Adds sequence s's weighted contribution for every weight set.
void accumulate_sequence(const ParamVector& params, const ModelConfig& config,
                         const RolloutBatch& batch, const BatchForward& fwd, std::size_t s,
                         std::span<const TokenWeights> weights, std::vector<ParamVector>& out,
                         std::vector<double>& scratch) {
  const std::size_t i = fwd.indices[s];
  const Tokens& response = batch.responses[i];
  const SequenceForward& sf = fwd.seqs[s];
  for (std::size_t w = 0; w < weights.size(); ++w) {
    for (std::size_t r = 0; r < sf.positions.size(); ++r) {
      const double wm = weights[w].main[s][r];
      const double wt = r >= sf.mtp_offset ? weights[w].mtp[s][r] : 0.0;
      detail::add_logprob_grad(params, config, sf.positions[r], response[r], wm, wt,
                               out[w].values(), scratch);
    }
  }
}

void check_weights(const BatchForward& fwd, std::span<const TokenWeights> weights) {
  for (const TokenWeights& w : weights) {
    if (w.main.size() != fwd.seqs.size() || w.mtp.size() != fwd.seqs.size()) {
      throw InputError("token weights do not match the forward batch");
    }
    for (std::size_t s = 0; s < fwd.seqs.size(); ++s) {
      if (w.main[s].size() != fwd.seqs[s].positions.size() ||
          w.mtp[s].size() != fwd.seqs[s].positions.size()) {
        throw InputError("token weights do not match the forward batch");
      }
    }
  }
}

// Validates on the calling thread; the OpenMP regions below must not throw.
void check_inputs(const ModelConfig& config, const RolloutBatch& batch,
                  std::span<const std::size_t> indices) {
  for (std::size_t i : indices) {
    if (i >= batch.size()) throw InputError("batch index out of range");
    detail::check_tokens(config, batch.sequence(i));
    if (batch.prompt_of(i).empty()) throw InputError("empty prompt in batch");
  }
}

}  // namespace

BatchForward forward_batch(const ParamVector& params, const ModelConfig& config,
                           const RolloutBatch& batch, std::span<const std::size_t> indices,
                           Exec exec, ForwardCounter* counter) {
  check_inputs(config, batch, indices);
  BatchForward fwd;
  fwd.indices.assign(indices.begin(), indices.end());
  fwd.seqs.resize(indices.size());
  const auto n = static_cast<std::ptrdiff_t>(indices.size());
  if (exec == Exec::Serial) {
    for (std::ptrdiff_t s = 0; s < n; ++s) {
      fwd.seqs[static_cast<std::size_t>(s)] =
          forward_one(params, config, batch, indices[static_cast<std::size_t>(s)]);
    }
  } else {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t s = 0; s < n; ++s) {
      fwd.seqs[static_cast<std::size_t>(s)] =
          forward_one(params, config, batch, indices[static_cast<std::size_t>(s)]);
    }
  }
  count(counter, indices.size());
  return fwd;
}

std::vector<ParamVector> backward_batch(const ParamVector& params, const ModelConfig& config,
                                        const RolloutBatch& batch, const BatchForward& fwd,
                                        std::span<const TokenWeights> weights, Exec exec) {
  check_weights(fwd, weights);
  std::vector<ParamVector> out(weights.size(), ParamVector::zeros_like(params));
  const std::size_t n = fwd.seqs.size();

  if (exec == Exec::Serial) {
    std::vector<double> scratch;
    for (std::size_t s = 0; s < n; ++s) {
      accumulate_sequence(params, config, batch, fwd, s, weights, out, scratch);
    }
    return out;
  }

  const std::size_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
  std::vector<std::vector<ParamVector>> partial(blocks);
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
      auto& acc = partial[static_cast<std::size_t>(b)];
      acc.assign(weights.size(), ParamVector::zeros_like(params));
      const std::size_t lo = static_cast<std::size_t>(b) * kReduceBlock;
      const std::size_t hi = std::min(n, lo + kReduceBlock);
      for (std::size_t s = lo; s < hi; ++s) {
        accumulate_sequence(params, config, batch, fwd, s, weights, acc, scratch);
      }
    }
  }

  const auto dim = static_cast<std::ptrdiff_t>(params.size());
  for (std::size_t w = 0; w < weights.size(); ++w) {
    std::span<double> dst = out[w].values();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t j = 0; j < dim; ++j) {
      double v = 0.0;
      for (std::size_t b = 0; b < blocks; ++b) v += partial[b][w][static_cast<std::size_t>(j)];
      dst[static_cast<std::size_t>(j)] = v;
    }
  }
  return out;
}

std::vector<std::vector<double>> main_logprobs(const ParamVector& params,
                                               const ModelConfig& config,
                                               const RolloutBatch& batch,
                                               std::span<const std::size_t> indices, Exec exec,
                                               ForwardCounter* counter) {
  check_inputs(config, batch, indices);
  std::vector<std::vector<double>> out(indices.size());
  const auto n = static_cast<std::ptrdiff_t>(indices.size());
  if (exec == Exec::Serial) {
    detail::PositionState st;
    for (std::ptrdiff_t s = 0; s < n; ++s) {
      out[static_cast<std::size_t>(s)] =
          main_logprobs_one(params, config, batch, indices[static_cast<std::size_t>(s)], st);
    }
  } else {
#pragma omp parallel
    {
      detail::PositionState st;
#pragma omp for schedule(static)
      for (std::ptrdiff_t s = 0; s < n; ++s) {
        out[static_cast<std::size_t>(s)] =
            main_logprobs_one(params, config, batch, indices[static_cast<std::size_t>(s)], st);
      }
    }
  }
  count(counter, indices.size());
  return out;
}

std::vector<SampledResponse> sample_responses(const ParamVector& params,
                                              const ModelConfig& config,
                                              std::span<const Tokens> prompts,
                                              std::size_t response_len, double temperature,
                                              std::span<const std::uint64_t> seeds, Exec exec,
                                              ForwardCounter* counter) {
  if (prompts.size() != seeds.size()) throw InputError("one seed per prompt is required");
  std::vector<SampledResponse> out(prompts.size());
  const auto n = static_cast<std::ptrdiff_t>(prompts.size());
  auto one = [&](std::ptrdiff_t i) {
    const auto u = static_cast<std::size_t>(i);
    Rng rng(seeds[u]);
    out[u] = sample_sequence(params, config, prompts[u], response_len, temperature, rng);
  };
  if (exec == Exec::Serial) {
    for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
  } else {
    // sample_sequence may throw; keep exceptions inside the parallel region.
    std::exception_ptr error;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        one(i);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  }
  count(counter, prompts.size());
  return out;
}

}  // namespace kernels
}  // namespace occlab
