#include "occlab/occ.hpp"

#include <cmath>

#include "occlab/errors.hpp"
#include "occlab/vec_ops.hpp"

namespace occlab {

std::string_view to_string(ClipMode m) { return m == ClipMode::Clip ? "clip" : "noclip"; }

std::string_view to_string(ProxyBackend b) {
  return b == ProxyBackend::FirstOrder ? "first_order" : "virtual_step";
}

void OccConfig::validate() const {
  if (!(lambda_plus > 0.0) || !std::isfinite(lambda_plus)) {
    throw ConfigError("occ.lambda_plus must be positive");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("occ.epsilon must be positive");
  if (!(lambda_cap > 0.0)) throw ConfigError("occ.lambda_cap must be positive");
  if (!(ema >= 0.0 && ema < 1.0)) throw ConfigError("occ.ema must be in [0, 1)");
}

namespace {

std::vector<std::size_t> resolve(const RolloutBatch& batch, std::span<const std::size_t> indices) {
  if (!indices.empty()) return {indices.begin(), indices.end()};
  return batch.all_indices();
}

ParamVector shifted(const ParamVector& params, const ParamVector& g, double step) {
  if (g.layout() != params.layout()) throw InputError("gradient shape does not match params");
  ParamVector out = params;
  vec::axpy(step, g.values(), out.values());
  return out;
}

DeltaVector difference(const std::vector<std::vector<double>>& after,
                       const std::vector<std::vector<double>>& before, double scale) {
  if (after.size() != before.size()) throw InputError("baseline does not match the batch");
  DeltaVector d;
  for (std::size_t s = 0; s < after.size(); ++s) {
    if (after[s].size() != before[s].size()) throw InputError("baseline does not match the batch");
    for (std::size_t r = 0; r < after[s].size(); ++r) {
      d.values.push_back(scale * (after[s][r] - before[s][r]));
    }
  }
  d.token_count = d.values.size();
  if (!vec::all_finite(d.values)) throw InputError("non-finite log-prob change");
  return d;
}

}  // namespace

DeltaVector virtual_step_delta(const ParamVector& params, const ModelConfig& config,
                               const RolloutBatch& batch, std::span<const std::size_t> indices,
                               const std::vector<std::vector<double>>& baseline,
                               const ParamVector& g, double eta, ForwardCounter* counter) {
  const ParamVector moved = shifted(params, g, eta);
  const auto after = kernels::main_logprobs(moved, config, batch, indices, Exec::Parallel, counter);
  return difference(after, baseline, 1.0);
}

DeltaVector logprob_delta(const ParamVector& params, const ModelConfig& config,
                          const RolloutBatch& batch, const ParamVector& g, double eta,
                          ProxyBackend backend, std::span<const std::size_t> indices,
                          ForwardCounter* counter) {
  if (g.layout() != params.layout()) throw InputError("gradient shape does not match params");
  const std::vector<std::size_t> idx = resolve(batch, indices);
  if (backend == ProxyBackend::VirtualStep) {
    const auto base = kernels::main_logprobs(params, config, batch, idx, Exec::Parallel, counter);
    return virtual_step_delta(params, config, batch, idx, base, g, eta, counter);
  }
  const double h = kFirstOrderProbe;
  const auto plus = kernels::main_logprobs(shifted(params, g, h), config, batch, idx,
                                           Exec::Parallel, counter);
  const auto minus = kernels::main_logprobs(shifted(params, g, -h), config, batch, idx,
                                            Exec::Parallel, counter);
  return difference(plus, minus, eta / (2.0 * h));
}

double alignment_proxy(const DeltaVector& delta_rl, const DeltaVector& delta_mtp) {
  if (delta_rl.token_count != delta_mtp.token_count) {
    throw InputError("alignment_proxy: token counts differ");
  }
  return vec::dot(delta_rl.values, delta_mtp.values);
}

double variance_proxy(const DeltaVector& delta_mtp) { return vec::norm2(delta_mtp.values); }

double occ_lambda(double c_hat, double v2_hat, const OccConfig& occ) {
  if (v2_hat < 0.0) throw InputError("occ_lambda: v2_hat must be nonnegative");
  const double c = occ.clip_mode == ClipMode::Clip ? std::max(0.0, c_hat) : c_hat;
  return occ.lambda_plus * c / (v2_hat + occ.epsilon);
}

double cap_lambda(double lambda, double cap, bool* hit) {
  const bool bound = std::abs(lambda) > cap;
  if (hit != nullptr) *hit = bound;
  return bound ? std::copysign(cap, lambda) : lambda;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  vec::require_same_size(x, y);
  if (x.size() < 2) throw InputError("pearson: need at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedError("correlation undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

Fidelity proxy_fidelity(std::span<const ProxyStats> history) {
  if (history.size() < 3) throw InputError("proxy_fidelity: need at least 3 records");
  std::vector<double> ch, ce, vh, ve;
  for (const ProxyStats& p : history) {
    if (!p.c_exact || !p.v2_exact) throw InputError("proxy_fidelity: record lacks exact values");
    ch.push_back(p.c_hat);
    ce.push_back(*p.c_exact);
    vh.push_back(p.v2_hat);
    ve.push_back(*p.v2_exact);
  }
  return {pearson(ch, ce), pearson(vh, ve)};
}

}  // namespace occlab
