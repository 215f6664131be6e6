#pragma once

// Log-probability proxies for the gradient inner products, and the adaptive
// coefficient lambda_t = lambda_plus * c_hat / (v2_hat + epsilon).
//
// A proxy vector delta holds the change in the MAIN head's realized-token
// log-probs, over every response position of the evaluated sequences, caused
// by a step eta * g. Prompt positions never appear.

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "occlab/batch.hpp"
#include "occlab/kernels.hpp"

namespace occlab {

enum class ClipMode { NoClip, Clip };
enum class ProxyBackend { VirtualStep, FirstOrder };

std::string_view to_string(ClipMode m);
std::string_view to_string(ProxyBackend b);

struct OccConfig {
  double lambda_plus = 1.0;
  double epsilon = 1e-8;
  ClipMode clip_mode = ClipMode::NoClip;
  ProxyBackend proxy_backend = ProxyBackend::VirtualStep;
  double lambda_cap = 100.0;  // |lambda_t| safety cap
  double ema = 0.0;           // weight on the previous lambda; 0 disables smoothing

  void validate() const;
  bool operator==(const OccConfig&) const = default;
};

struct DeltaVector {
  std::vector<double> values;
  std::size_t token_count = 0;
};

struct ProxyStats {
  double c_hat = 0.0;
  double v2_hat = 0.0;
  double lambda_t = 0.0;
  std::optional<double> c_exact;
  std::optional<double> v2_exact;
};

inline constexpr double kFirstOrderProbe = 1e-5;

/// Proxy vector for the step eta * g on the sequences in `indices` (all of the
/// batch when empty). VirtualStep re-evaluates at theta + eta g on a scratch
/// copy; FirstOrder takes a central difference along g with probe 1e-5.
DeltaVector logprob_delta(const ParamVector& params, const ModelConfig& config,
                          const RolloutBatch& batch, const ParamVector& g, double eta,
                          ProxyBackend backend, std::span<const std::size_t> indices = {},
                          ForwardCounter* counter = nullptr);

/// VirtualStep proxy against already-computed baseline log-probs
/// (baseline[s][r] for indices[s]). Costs one batch evaluation.
DeltaVector virtual_step_delta(const ParamVector& params, const ModelConfig& config,
                               const RolloutBatch& batch, std::span<const std::size_t> indices,
                               const std::vector<std::vector<double>>& baseline,
                               const ParamVector& g, double eta,
                               ForwardCounter* counter = nullptr);

double alignment_proxy(const DeltaVector& delta_rl, const DeltaVector& delta_mtp);
double variance_proxy(const DeltaVector& delta_mtp);

/// Uncapped, unsmoothed coefficient.
double occ_lambda(double c_hat, double v2_hat, const OccConfig& occ);

/// Clamps |lambda| to the cap; `hit` reports whether it bound.
double cap_lambda(double lambda, double cap, bool* hit = nullptr);

/// Pearson correlation; UndefinedError when either series is constant.
double pearson(std::span<const double> x, std::span<const double> y);

struct Fidelity {
  double pearson_c = 0.0;
  double pearson_v2 = 0.0;
};

/// Correlation of the proxies with their exact counterparts across records.
/// Needs at least 3 records, each with both exact fields.
Fidelity proxy_fidelity(std::span<const ProxyStats> history);

}  // namespace occlab
