#include <gtest/gtest.h>

#include <cmath>

#include "occlab/errors.hpp"
#include "occlab/surrogate.hpp"
#include "occlab/vec_ops.hpp"
#include "test_util.hpp"

using namespace occlab;
using namespace occlab::testing;

namespace {

// theta moved away from the sampling point so importance ratios differ from 1.
ParamVector off_policy(const ParamVector& p, std::uint64_t seed, double scale) {
  ParamVector q = p;
  const auto d = random_direction(p.size(), seed);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] += scale * d[i];
  return q;
}

double directional_fd(const ParamVector& p, const ModelConfig& m, const RolloutBatch& b,
                      Objective obj, const AlgoConfig& algo, Estimator est,
                      const std::vector<double>& d, double h) {
  ParamVector a = p, c = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    a[i] += h * d[i];
    c[i] -= h * d[i];
  }
  const auto idx = b.all_indices();
  return (objective_value(a, m, b, idx, obj, algo, est) - objective_value(c, m, b, idx, obj, algo, est)) /
         (2 * h);
}

double worst_case_error(const ModelConfig& m, const Task& t, Algo algo, Objective obj,
                        Estimator est, std::uint64_t seed) {
  const ParamVector p0 = random_params(m, seed, 0.5);
  const RolloutBatch b = make_batch(m, t, p0, 16, 4, seed);
  const ParamVector p = off_policy(p0, seed + 7, 0.05);
  const AlgoConfig cfg = AlgoConfig::defaults_for(algo);
  const Objective objs[] = {obj};
  const ParamVector g = objective_gradients(p, m, b, b.all_indices(), objs, cfg, est)[0];
  const auto d = random_direction(p.size(), seed + 3);
  const double fd = directional_fd(p, m, b, obj, cfg, est, d, 1e-6);
  return rel_err(vec::dot(g.values(), d), fd, 1e-8);
}

}  // namespace

// Every (backend, algorithm, objective) pair against the directional
// derivative of its own surrogate value, off-policy.
TEST(SurrogateGradients, MatchFiniteDifferences) {
  int cases = 0;
  for (const ModelConfig& m : {tabular(6), mlp(6, 8)}) {
    for (const Task& t : {make_sum_mod(6), make_copy_reverse(6, 3)}) {
      for (Algo algo : {Algo::GRPO, Algo::DapoLite, Algo::GspoLite}) {
        for (Objective obj : {Objective::Rl, Objective::MtpPolicy, Objective::MtpCrossEntropy}) {
          for (std::uint64_t seed = 0; seed < 2; ++seed) {
            EXPECT_LT(worst_case_error(m, t, algo, obj, Estimator::Surrogate, 10 * seed + 1), 1e-5)
                << to_string(m.backend) << " " << to_string(algo) << " objective "
                << static_cast<int>(obj);
            ++cases;
          }
        }
      }
    }
  }
  EXPECT_GE(cases, 72);
}

TEST(SurrogateGradients, RatioEstimatorMatchesFiniteDifferences) {
  for (const ModelConfig& m : {tabular(6), mlp(6, 8)}) {
    EXPECT_LT(worst_case_error(m, make_copy_reverse(6, 3), Algo::GRPO, Objective::Rl,
                               Estimator::Ratio, 5),
              1e-5);
  }
}

TEST(SurrogateGradients, OnPolicyAlgorithmsAgree) {
  for (const ModelConfig& m : {tabular(6), mlp(6, 8)}) {
    const Task t = make_copy_reverse(6, 2);
    const ParamVector p = random_params(m, 2, 0.5);
    const RolloutBatch b = make_batch(m, t, p, 32, 4, 2);
    const ParamVector grpo = rl_gradient(p, m, b, AlgoConfig::defaults_for(Algo::GRPO));
    for (Algo a : {Algo::DapoLite, Algo::GspoLite}) {
      const ParamVector other = rl_gradient(p, m, b, AlgoConfig::defaults_for(a));
      for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(other[i], grpo[i], 1e-9);
    }
  }
}

TEST(SurrogateGradients, ZeroAdvantagesGiveZeroGradient) {
  const ModelConfig m = mlp(6, 8);
  const ParamVector p = random_params(m, 3);
  RolloutBatch b = make_batch(m, make_sum_mod(6), p, 16, 4, 3);
  std::fill(b.advantages.begin(), b.advantages.end(), 0.0);
  const AlgoConfig algo;
  EXPECT_EQ(rl_gradient(p, m, b, algo), ParamVector::zeros_like(p));
  EXPECT_EQ(mtp_policy_gradient(p, m, b, algo), ParamVector::zeros_like(p));
}

TEST(SurrogateGradients, MtpPolicySegments) {
  const ParamVector pt = random_params(tabular(6), 4);
  const RolloutBatch bt = make_batch(tabular(6), make_sum_mod(6), pt, 16, 4, 4);
  const ParamVector gt = mtp_policy_gradient(pt, tabular(6), bt, AlgoConfig{});
  for (double v : gt.segment_values(SegmentName::MainHead)) EXPECT_EQ(v, 0.0);

  const ModelConfig m = mlp(6, 8);
  const ParamVector pm = random_params(m, 4);
  const RolloutBatch bm = make_batch(m, make_sum_mod(6), pm, 16, 4, 4);
  const ParamVector gm = mtp_policy_gradient(pm, m, bm, AlgoConfig{});
  EXPECT_GT(vec::norm2(gm.segment_values(SegmentName::Trunk)), 1e-12);
  for (double v : gm.segment_values(SegmentName::MainHead)) EXPECT_EQ(v, 0.0);
}

TEST(CeGradient, IdenticalResponsesGiveSingleSampleGradient) {
  const ModelConfig m = mlp(6, 8);
  const ParamVector p = random_params(m, 5);
  RolloutBatch b = make_batch(m, make_copy_reverse(6, 3), p, 8, 8, 5);
  for (auto& r : b.responses) r = b.responses[0];
  for (auto& lp : b.old_logprobs) lp = b.old_logprobs[0];
  const ParamVector g = ce_gradient(p, m, b);
  ParamVector single = ParamVector::zeros_like(p);
  for (std::size_t pos = 3; pos < 6; ++pos) {
    const ParamVector u = grad_logprob(p, m, b.prompts[0], b.responses[0], Head::Mtp, pos);
    vec::axpy(1.0 / 3.0, u.values(), single.values());
  }
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(g[i], single[i], 1e-12);
}

TEST(CeGradient, AscentStepRaisesLikelihood) {
  const ModelConfig m = mlp(6, 8);
  const ParamVector p = random_params(m, 6);
  const RolloutBatch b = make_batch(m, make_copy_reverse(6, 3), p, 16, 4, 6);
  const ParamVector g = ce_gradient(p, m, b);
  ParamVector q = p;
  vec::axpy(1e-3, g.values(), q.values());
  const auto idx = b.all_indices();
  EXPECT_GT(objective_value(q, m, b, idx, Objective::MtpCrossEntropy, AlgoConfig{}),
            objective_value(p, m, b, idx, Objective::MtpCrossEntropy, AlgoConfig{}));
}

TEST(Kernels, SerialAndParallelGradientsAgree) {
  const ModelConfig m = mlp(8, 16);
  const ParamVector p = random_params(m, 7);
  const RolloutBatch b = make_batch(m, make_copy_reverse(8, 3), p, 128, 8, 7);
  const Objective objs[] = {Objective::Rl, Objective::MtpPolicy, Objective::MtpCrossEntropy};
  const auto idx = b.all_indices();
  const auto s = objective_gradients(p, m, b, idx, objs, AlgoConfig{}, Estimator::Surrogate, Exec::Serial);
  const auto q = objective_gradients(p, m, b, idx, objs, AlgoConfig{}, Estimator::Surrogate, Exec::Parallel);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(s[k][i], q[k][i], 1e-12);
  }
}

TEST(Kernels, ForwardCounterCountsSequences) {
  const ModelConfig m = tabular(6);
  const ParamVector p = init_params(m, 0);
  const RolloutBatch b = make_batch(m, make_sum_mod(6), p, 24, 4, 1);
  ForwardCounter c;
  const std::vector<std::size_t> idx{0, 3, 5};
  kernels::forward_batch(p, m, b, idx, Exec::Parallel, &c);
  EXPECT_EQ(c.sequences, 3u);
  kernels::main_logprobs(p, m, b, b.all_indices(), Exec::Serial, &c);
  EXPECT_EQ(c.sequences, 27u);
}

TEST(CeDecomposition, SingleSampleHasNoCrossTerm) {
  const std::vector<std::vector<double>> u = {{1.0, 2.0, -1.0}};
  const std::vector<double> a = {0.7};
  const CeDecomposition d = ce_diagonal_decomposition(u, a);
  EXPECT_EQ(d.cross, 0.0);
  EXPECT_NEAR(d.diagonal, 0.7 * 6.0, 1e-15);
}

TEST(CeDecomposition, OrthogonalSamplesHaveNoCrossTerm) {
  std::vector<std::vector<double>> u(4, std::vector<double>(4, 0.0));
  for (std::size_t i = 0; i < 4; ++i) u[i][i] = 1.0 + static_cast<double>(i);
  const std::vector<double> a = {1.0, -0.5, 2.0, -2.5};
  EXPECT_EQ(ce_diagonal_decomposition(u, a).cross, 0.0);
}

// Brute-force double sum over (i, j) pairs.
TEST(CeDecomposition, ReconstructsFullInnerProduct) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 9), dim = 5;
    std::vector<std::vector<double>> u(n, std::vector<double>(dim)), w(n, std::vector<double>(dim));
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = nd(rng);
      for (std::size_t k = 0; k < dim; ++k) {
        u[i][k] = nd(rng);
        w[i][k] = nd(rng);
      }
    }
    double diag = 0.0, cross = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < dim; ++k) dot += u[i][k] * w[j][k];
        (i == j ? diag : cross) += a[i] * dot / static_cast<double>(n * n);
      }
    }
    const CeDecomposition d = ce_diagonal_decomposition(u, w, a);
    EXPECT_NEAR(d.diagonal, diag, 1e-12);
    EXPECT_NEAR(d.cross, cross, 1e-9);
    EXPECT_NEAR(d.diagonal + d.cross, diag + cross, 1e-9);
  }
}

TEST(CeDecomposition, RejectsShapeMismatch) {
  const std::vector<std::vector<double>> u = {{1.0}, {2.0}};
  const std::vector<double> a = {1.0};
  EXPECT_THROW(ce_diagonal_decomposition(u, a), InputError);
}
