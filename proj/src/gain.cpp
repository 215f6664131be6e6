#include "occlab/gain.hpp"

#include <cmath>
#include <random>

#include "occlab/errors.hpp"
#include "occlab/kernels.hpp"
#include "occlab/surrogate.hpp"
#include "occlab/vec_ops.hpp"

namespace occlab {
namespace {

void check_step(double eta, double L) {
  if (!std::isfinite(eta) || !std::isfinite(L) || eta <= 0.0 || L <= 0.0) {
    throw ConfigError("eta and L must be positive and finite");
  }
  if (L * eta >= 1.0) throw ConfigError("L * eta must be < 1 for the improvement bound");
}

void check_optimum(double c, double v2, double eta, double L) {
  check_step(eta, L);
  if (!std::isfinite(c) || !std::isfinite(v2)) throw ConfigError("c and v2 must be finite");
  if (v2 < 0.0) throw ConfigError("v2 must be nonnegative");
  if (v2 == 0.0) throw UndefinedError("optimum undefined for v2 == 0");
}

}  // namespace

void GainInputs::validate() const {
  check_step(eta, L);
  if (!std::isfinite(c) || !std::isfinite(v2) || !std::isfinite(lambda)) {
    throw ConfigError("gain inputs must be finite");
  }
  if (v2 < 0.0) throw ConfigError("v2 must be nonnegative");
}

GainDecomposition delta_mtp(const GainInputs& in) {
  in.validate();
  GainDecomposition d;
  d.first_order = in.eta * in.lambda * (1.0 - in.L * in.eta) * in.c;
  d.second_order = -(in.L * in.eta * in.eta * in.lambda * in.lambda / 2.0) * in.v2;
  d.delta_mtp = d.first_order + d.second_order;
  if (in.v2 > 0.0) {
    d.lambda_star = lambda_star(in.c, in.v2, in.eta, in.L);
    d.gain_at_optimum = gain_at_optimum(in.c, in.v2, in.eta, in.L);
  }
  return d;
}

double lambda_star(double c, double v2, double eta, double L) {
  check_optimum(c, v2, eta, L);
  return (1.0 - L * eta) * c / (L * eta * v2);
}

double gain_at_optimum(double c, double v2, double eta, double L) {
  check_optimum(c, v2, eta, L);
  const double k = 1.0 - L * eta;
  return k * k * c * c / (2.0 * L * v2);
}

double positivity_threshold(double c, double v2, double eta, double L) {
  return 2.0 * lambda_star(c, v2, eta, L);
}

SmoothnessCheck smoothness_bound_check(const ScalarObjective& objective,
                                       std::span<const double> theta,
                                       std::span<const double> theta_prime, double L) {
  vec::require_same_size(theta, theta_prime);
  std::vector<double> step(theta_prime.begin(), theta_prime.end());
  vec::axpy(-1.0, theta, step);
  const std::vector<double> g = objective.gradient(theta);
  vec::require_same_size(g, theta);
  SmoothnessCheck out;
  out.lhs = objective.value(theta_prime);
  out.rhs = objective.value(theta) + vec::dot(g, step) - 0.5 * L * vec::norm2(step);
  out.holds = out.lhs >= out.rhs - 1e-12;
  return out;
}

double estimate_curvature(const std::function<std::vector<double>(std::span<const double>)>& grad,
                          std::span<const double> theta, int probes, double fd_step,
                          int iterations, std::uint64_t seed) {
  if (probes < 1) throw InputError("estimate_curvature: probes must be >= 1");
  if (!(fd_step > 0.0)) throw InputError("estimate_curvature: fd_step must be positive");
  if (iterations < 1) throw InputError("estimate_curvature: iterations must be >= 1");
  const std::vector<double> g0 = grad(theta);
  const std::size_t n = theta.size();
  std::vector<double> point(n), d(n);
  double best = 0.0;
  for (int p = 0; p < probes; ++p) {
    std::seed_seq ss{seed, static_cast<std::uint64_t>(p)};
    Rng rng(ss);
    std::normal_distribution<double> normal;
    for (double& x : d) x = normal(rng);
    double estimate = 0.0;
    for (int it = 0; it < iterations; ++it) {
      const double dn = vec::norm(d);
      if (dn == 0.0) break;
      for (double& x : d) x /= dn;
      for (std::size_t j = 0; j < n; ++j) point[j] = theta[j] + fd_step * d[j];
      std::vector<double> hd = grad(point);
      vec::axpy(-1.0, g0, hd);
      for (double& x : hd) x /= fd_step;
      estimate = vec::norm(hd);
      d = std::move(hd);
    }
    best = std::max(best, estimate);
  }
  return best;
}

double estimate_L(const ParamVector& params, const ModelConfig& config,
                  const RolloutBatch& batch, int probes, double fd_step, int iterations,
                  ForwardCounter* counter) {
  batch.validate();
  const auto idx = batch.all_indices();
  const Objective objs[] = {Objective::Rl};
  auto grad = [&](std::span<const double> theta) {
    const ParamVector p(params.layout(), std::vector<double>(theta.begin(), theta.end()));
    auto g = objective_gradients(p, config, batch, idx, objs, AlgoConfig{}, Estimator::Ratio,
                                 Exec::Parallel, counter);
    return std::vector<double>(g[0].values().begin(), g[0].values().end());
  };
  return estimate_curvature(grad, params.values(), probes, fd_step, iterations);
}

}  // namespace occlab
