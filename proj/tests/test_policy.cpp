#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "occlab/errors.hpp"
#include "occlab/policy.hpp"
#include "test_util.hpp"

using namespace occlab;
using namespace occlab::testing;

namespace {

double logsumexp_check(const std::vector<double>& logp) {
  double s = 0.0;
  for (double l : logp) s += std::exp(l);
  return s;
}

double logprob_at(const ParamVector& p, const ModelConfig& m, const Tokens& seq, std::size_t pos,
                  Head head) {
  const auto d = forward_logprobs(p, m, std::span(seq).first(pos));
  return (head == Head::Main ? d.main : d.mtp)[static_cast<std::size_t>(seq[pos])];
}

}  // namespace

TEST(ModelConfig, TabularParameterCount) {
  // 256 two-token keys + 16 single-token keys, 16 logits each, three tables.
  EXPECT_EQ(tabular(16).param_count(), 13056u);
}

TEST(ModelConfig, MlpParameterCount) {
  // trunk 16 x (8 + 8) + 16, each head 8 x 16 + 8
  EXPECT_EQ(mlp(8, 16).param_count(), 16u * 16 + 16 + 2 * (8 * 16 + 8));
}

TEST(ModelConfig, SegmentsTile) {
  for (const ModelConfig& m : {tabular(), mlp()}) {
    const ParamLayout l = m.layout();
    EXPECT_EQ(l.segment(SegmentName::Trunk).begin, 0u);
    EXPECT_EQ(l.segment(SegmentName::Trunk).end, l.segment(SegmentName::MainHead).begin);
    EXPECT_EQ(l.segment(SegmentName::MainHead).end, l.segment(SegmentName::MtpHead).begin);
    EXPECT_EQ(l.segment(SegmentName::MtpHead).end, l.total());
  }
}

TEST(ModelConfig, RejectsBadValues) {
  ModelConfig m = tabular();
  m.vocab_size = 1;
  EXPECT_THROW(m.validate(), ConfigError);
  m = mlp();
  m.hidden_dim = 5000;
  EXPECT_THROW(m.validate(), ConfigError);
  m = tabular();
  m.mtp_depth = 2;
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(InitParams, DeterministicAndSeedSensitive) {
  for (const ModelConfig& m : {tabular(), mlp()}) {
    EXPECT_EQ(init_params(m, 3), init_params(m, 3));
    EXPECT_NE(init_params(m, 0), init_params(m, 1));
  }
}

TEST(InitParams, ScaleIsSmall) {
  const ParamVector p = init_params(tabular(), 0);
  const double ss = std::inner_product(p.raw().begin(), p.raw().end(), p.raw().begin(), 0.0);
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(p.size())), 0.1, 0.005);
}

TEST(Forward, HeadsNormalized) {
  for (const ModelConfig& m : {tabular(), mlp()}) {
    const ParamVector p = random_params(m, 4, 2.0);
    for (const Tokens& ctx : {Tokens{3}, Tokens{1, 2}, Tokens{0, 7, 5, 4}}) {
      const auto d = forward_logprobs(p, m, ctx);
      EXPECT_NEAR(logsumexp_check(d.main), 1.0, 1e-9);
      EXPECT_NEAR(logsumexp_check(d.mtp), 1.0, 1e-9);
      for (double l : d.main) EXPECT_LE(l, 0.0);
    }
  }
}

TEST(Forward, ZeroTabularIsUniform) {
  const ModelConfig m = tabular(16);
  const ParamVector p(m.layout());
  const auto d = forward_logprobs(p, m, Tokens{4, 9});
  for (double l : d.main) EXPECT_NEAR(l, -std::log(16.0), 1e-15);
  for (double l : d.mtp) EXPECT_NEAR(l, -std::log(16.0), 1e-15);
}

TEST(Forward, RejectsOutOfVocabulary) {
  const ModelConfig m = tabular(8);
  const ParamVector p = init_params(m, 0);
  EXPECT_THROW(forward_logprobs(p, m, Tokens{1, 8}), InputError);
  EXPECT_THROW(forward_logprobs(p, m, Tokens{}), InputError);
}

TEST(Forward, MlpTrunkReachesBothHeadsAndMtpHeadOnlyItsOwn) {
  const ModelConfig m = mlp();
  const ParamVector p = random_params(m, 5);
  const Tokens ctx{2, 6};
  const auto base = forward_logprobs(p, m, ctx);
  auto changed = [&](std::size_t i) {
    ParamVector q = p;
    q[i] += 1e-3;
    const auto d = forward_logprobs(q, m, ctx);
    double dm = 0.0, dt = 0.0;
    for (std::size_t y = 0; y < d.main.size(); ++y) {
      dm = std::max(dm, std::abs(d.main[y] - base.main[y]));
      dt = std::max(dt, std::abs(d.mtp[y] - base.mtp[y]));
    }
    return std::pair{dm, dt};
  };
  // Bias of the last hidden unit closes the trunk block.
  const std::size_t trunk_bias = m.layout().segment(SegmentName::Trunk).end - 1;
  auto [tm, tt] = changed(trunk_bias);
  EXPECT_GT(tm, 1e-8);
  EXPECT_GT(tt, 1e-8);
  auto [hm, ht] = changed(m.layout().segment(SegmentName::MtpHead).begin);
  EXPECT_EQ(hm, 0.0);
  EXPECT_GT(ht, 1e-8);
}

TEST(Sampling, DeterministicGivenRngState) {
  const ModelConfig m = tabular();
  const ParamVector p = random_params(m, 1);
  Rng a(9), b(9);
  EXPECT_EQ(sample_sequence(p, m, Tokens{1, 2}, 3, 1.0, a).tokens,
            sample_sequence(p, m, Tokens{1, 2}, 3, 1.0, b).tokens);
}

TEST(Sampling, GreedyAtZeroTemperature) {
  const ModelConfig m = tabular();
  const ParamVector p = random_params(m, 2, 3.0);
  Rng rng(1);
  const Tokens prompt{5, 11};
  const auto r = sample_sequence(p, m, prompt, 3, 0.0, rng);
  Tokens seq = prompt;
  for (Token t : r.tokens) {
    const auto d = forward_logprobs(p, m, seq);
    EXPECT_EQ(t, std::max_element(d.main.begin(), d.main.end()) - d.main.begin());
    seq.push_back(t);
  }
}

TEST(Sampling, FrequenciesMatchMainHead) {
  const ModelConfig m = tabular(8);
  const ParamVector p = random_params(m, 3, 1.0);
  const Tokens prompt{2, 3};
  const auto d = forward_logprobs(p, m, prompt);
  std::vector<double> freq(8, 0.0);
  Rng rng(42);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    freq[static_cast<std::size_t>(sample_sequence(p, m, prompt, 1, 1.0, rng).tokens[0])] += 1.0 / n;
  }
  for (std::size_t y = 0; y < 8; ++y) EXPECT_NEAR(freq[y], std::exp(d.main[y]), 3.0 / std::sqrt(n));
}

TEST(Sampling, RecordedLogprobsMatchRecomputation) {
  const ModelConfig m = mlp();
  const ParamVector p = random_params(m, 6);
  Rng rng(3);
  const Tokens prompt{1, 4, 2};
  const auto r = sample_sequence(p, m, prompt, 3, 0.7, rng);
  const auto lp = realized_logprobs(p, m, prompt, r.tokens);
  EXPECT_EQ(lp.main, r.logprobs.main);
  EXPECT_EQ(lp.mtp, r.logprobs.mtp);
  EXPECT_EQ(lp.mask, (std::vector<bool>{false, false, false, true, true, true}));
}

TEST(Sampling, MtpOffsetForShortPrompts) {
  EXPECT_EQ(mtp_offset_for(1), 1u);
  EXPECT_EQ(mtp_offset_for(2), 0u);
  const ModelConfig m = tabular(8);
  const auto lp = realized_logprobs(init_params(m, 0), m, Tokens{3}, Tokens{1, 2});
  EXPECT_EQ(lp.mtp_offset, 1u);
  EXPECT_EQ(lp.mtp.size(), 1u);
}

TEST(GradLogprob, TabularSoftmaxIdentity) {
  const ModelConfig m = tabular(8);
  const ParamVector p = random_params(m, 7);
  const Tokens prompt{3, 5}, response{6};
  const ParamVector g = grad_logprob(p, m, prompt, response, Head::Main, 2);
  const auto d = forward_logprobs(p, m, prompt);
  const std::size_t main_off = m.layout().segment(SegmentName::MainHead).begin;
  // Row of the key (3, 5); single-token keys follow the two-token ones.
  const std::size_t row = 3 * 8 + 5;
  for (std::size_t y = 0; y < 8; ++y) {
    const double want = (y == 6 ? 1.0 : 0.0) - std::exp(d.main[y]);
    EXPECT_NEAR(g[main_off + row * 8 + y], want, 1e-12);
  }
  EXPECT_EQ(g.masked_to(SegmentName::MtpHead), ParamVector::zeros_like(g));
}

TEST(GradLogprob, HeadSeparation) {
  for (const ModelConfig& m : {tabular(8), mlp()}) {
    const ParamVector p = random_params(m, 8);
    const Tokens prompt{1, 2}, response{3, 4};
    const ParamVector gm = grad_logprob(p, m, prompt, response, Head::Main, 3);
    const ParamVector gt = grad_logprob(p, m, prompt, response, Head::Mtp, 3);
    for (double v : gm.segment_values(SegmentName::MtpHead)) EXPECT_EQ(v, 0.0);
    for (double v : gt.segment_values(SegmentName::MainHead)) EXPECT_EQ(v, 0.0);
  }
}

TEST(GradLogprob, RejectsPromptPositions) {
  const ModelConfig m = tabular(8);
  const ParamVector p = init_params(m, 0);
  EXPECT_THROW(grad_logprob(p, m, Tokens{1, 2}, Tokens{3}, Head::Main, 1), InputError);
  EXPECT_THROW(grad_logprob(p, m, Tokens{1}, Tokens{3, 4}, Head::Mtp, 1), InputError);
}

// Central differences with step 1e-5 on every coordinate, five random MLPs.
TEST(GradLogprob, MlpMatchesFiniteDifferences) {
  const double h = 1e-5;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelConfig m = mlp(4 + static_cast<int>(seed), 6 + static_cast<int>(seed));
    const ParamVector p = random_params(m, 100 + seed, 0.8);
    const Tokens prompt{1, 3}, response{2, 0, 3};
    Tokens seq = prompt;
    seq.insert(seq.end(), response.begin(), response.end());
    for (Head head : {Head::Main, Head::Mtp}) {
      const std::size_t pos = 3;
      const ParamVector g = grad_logprob(p, m, prompt, response, head, pos);
      for (std::size_t i = 0; i < p.size(); ++i) {
        ParamVector a = p, b = p;
        a[i] += h;
        b[i] -= h;
        const double fd = (logprob_at(a, m, seq, pos, head) - logprob_at(b, m, seq, pos, head)) / (2 * h);
        EXPECT_LE(std::abs(fd - g[i]), 1e-6 * std::max(std::abs(g[i]), 1e-3))
            << "seed " << seed << " coord " << i;
      }
    }
  }
}
