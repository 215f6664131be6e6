#pragma once

// One-step improvement algebra for the update theta += eta (g_RL + lambda g_MTP)
// on an L-smooth objective J:
//
//   J(theta') - J(theta) >= eta (1 - L eta / 2) |g_RL|^2 + delta_mtp(lambda)
//   delta_mtp(lambda)    =  eta lambda (1 - L eta) c  -  (L eta^2 lambda^2 / 2) v2
//
// with c = <g_RL, g_MTP> and v2 = |g_MTP|^2. delta_mtp is a downward parabola
// in lambda with vertex lambda* = (1 - L eta) c / (L eta v2).

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "occlab/batch.hpp"
#include "occlab/kernels.hpp"
#include "occlab/policy.hpp"

namespace occlab {

struct GainInputs {
  double c = 0.0;
  double v2 = 0.0;
  double eta = 0.0;
  double L = 0.0;
  double lambda = 0.0;

  /// Throws ConfigError unless eta > 0, L > 0, L eta < 1, v2 >= 0, all finite.
  void validate() const;
};

struct GainDecomposition {
  double first_order = 0.0;
  double second_order = 0.0;
  double delta_mtp = 0.0;
  std::optional<double> lambda_star;      // empty when v2 == 0
  std::optional<double> gain_at_optimum;  // empty when v2 == 0
};

GainDecomposition delta_mtp(const GainInputs& in);

double lambda_star(double c, double v2, double eta, double L);
double gain_at_optimum(double c, double v2, double eta, double L);
double positivity_threshold(double c, double v2, double eta, double L);

/// A differentiable scalar objective: value and gradient at a point.
struct ScalarObjective {
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

struct SmoothnessCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// Tests J(theta') >= J(theta) + <grad J(theta), theta' - theta> - L/2 |theta' - theta|^2.
SmoothnessCheck smoothness_bound_check(const ScalarObjective& objective,
                                       std::span<const double> theta,
                                       std::span<const double> theta_prime, double L);

/// Largest curvature magnitude of a gradient field by power iteration on the
/// finite-difference Hessian-vector product (grad(theta + h d) - grad(theta)) / h.
/// Probe p starts from a direction seeded by (seed, p), so adding probes never
/// lowers the result.
double estimate_curvature(const std::function<std::vector<double>(std::span<const double>)>& grad,
                          std::span<const double> theta, int probes, double fd_step,
                          int iterations = 20, std::uint64_t seed = 0x5eed);

/// Curvature estimate of the main-head importance-ratio surrogate on `batch`
/// (Estimator::Ratio), the local model of J around the sampling policy.
double estimate_L(const ParamVector& params, const ModelConfig& config,
                  const RolloutBatch& batch, int probes, double fd_step,
                  int iterations = 20, ForwardCounter* counter = nullptr);

}  // namespace occlab
