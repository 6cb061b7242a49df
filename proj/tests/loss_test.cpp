#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "caps2ne/loss.hpp"
#include "oracles.hpp"

using namespace caps2ne;

namespace {

EmbeddingTable<double> random_table(std::size_t n, std::size_t k, std::uint64_t seed, double scale = 1.0) {
  KeyedRng rng(seed, RngDomain::embeddings);
  EmbeddingTable<double> O(n, k);
  for (auto& v : O.values) v = rng.uniform(-scale, scale);
  return O;
}

}  // namespace

TEST(SampledSoftmax, NoNegativesGivesZeroLoss) {
  const auto O = random_table(3, 4, 1);
  const std::vector<double> e = {0.1, 0.2, 0.3, 0.4};
  const auto r = sampled_softmax_loss<double>(e, 1, {}, O);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad_e) EXPECT_EQ(g, 0.0);
}

TEST(SampledSoftmax, EqualLogitsGiveLogOfCount) {
  EmbeddingTable<double> O(6, 2);
  const std::vector<double> e = {0.0, 0.0};
  const std::vector<NodeId> neg = {1, 2, 3, 4, 5};
  EXPECT_NEAR(sampled_softmax_loss<double>(e, 0, neg, O).loss, std::log(6.0), 1e-14);
}

TEST(SampledSoftmax, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto O = random_table(12, 5, seed);
    KeyedRng rng(seed, RngDomain::negatives);
    oracle::Vec e(5);
    for (auto& v : e) v = rng.uniform(-1, 1);
    const NodeId target = static_cast<NodeId>(seed % 12);
    const auto neg = sample_negatives(6, target, 12, rng);
    for (bool exclude : {false, true}) {
      const auto r = sampled_softmax_loss<double>(e, target, neg, O, exclude);
      const auto fe = oracle::central_difference(
          [&] { return sampled_softmax_loss<double>(e, target, neg, O, exclude).loss; }, e, 1e-6);
      EXPECT_LT(oracle::max_relative_error(r.grad_e, fe), 1e-6);
      for (std::size_t j = 0; j < r.rows.size(); ++j) {
        oracle::Vec row(O.row(r.rows[j]).begin(), O.row(r.rows[j]).end());
        const auto fo = oracle::central_difference(
            [&] {
              std::copy(row.begin(), row.end(), O.row(r.rows[j]).begin());
              return sampled_softmax_loss<double>(e, target, neg, O, exclude).loss;
            },
            row, 1e-6);
        std::copy(row.begin(), row.end(), O.row(r.rows[j]).begin());
        oracle::Vec analytic(5);
        for (std::size_t c = 0; c < 5; ++c) analytic[c] = r.grad_logits[j] * e[c];
        EXPECT_LT(oracle::max_relative_error(analytic, fo), 1e-6);
      }
    }
  }
}

TEST(SampledSoftmax, LargeLogitsStayFinite) {
  EmbeddingTable<double> O(3, 1);
  O.values = {700.0, -700.0, 699.0};
  const std::vector<double> e = {1.0};
  const std::vector<NodeId> neg = {1, 2};
  const auto r = sampled_softmax_loss<double>(e, 0, neg, O);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, std::log1p(std::exp(-1.0)), 1e-12);
  for (double g : r.grad_e) EXPECT_TRUE(std::isfinite(g));
  const auto flipped = sampled_softmax_loss<double>(e, 1, std::vector<NodeId>{0}, O);
  EXPECT_NEAR(flipped.loss, 1400.0, 1e-9);
}

TEST(SampledSoftmax, LossIsNonNegativeWhenTargetIncluded) {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const auto O = random_table(20, 4, seed, 5.0);
    KeyedRng rng(seed, RngDomain::negatives);
    std::vector<double> e(4);
    for (auto& v : e) v = rng.uniform(-1, 1);
    const auto neg = sample_negatives(1 + rng.uniform_index(18), 3, 20, rng);
    EXPECT_GE(sampled_softmax_loss<double>(e, 3, neg, O).loss, 0.0);
  }
}

TEST(SampledSoftmax, RejectsTargetAmongNegatives) {
  const auto O = random_table(4, 2, 1);
  const std::vector<double> e = {1, 1};
  EXPECT_THROW(sampled_softmax_loss<double>(e, 1, std::vector<NodeId>{0, 1}, O), std::invalid_argument);
}

TEST(Negatives, DistinctAndNeverTarget) {
  KeyedRng rng(3, RngDomain::negatives);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t n = 2 + rng.uniform_index(50);
    const auto target = static_cast<NodeId>(rng.uniform_index(n));
    const std::size_t num = rng.uniform_index(n);
    const auto neg = sample_negatives(num, target, n, rng);
    ASSERT_EQ(neg.size(), num);
    std::set<NodeId> s(neg.begin(), neg.end());
    EXPECT_EQ(s.size(), num);
    EXPECT_EQ(s.count(target), 0u);
    for (NodeId v : neg) EXPECT_LT(v, n);
  }
}

TEST(Negatives, TwoNodesForcesTheOther) {
  KeyedRng rng(4, RngDomain::negatives);
  EXPECT_EQ(sample_negatives(1, 0, 2, rng), std::vector<NodeId>{1});
  EXPECT_EQ(sample_negatives(1, 1, 2, rng), std::vector<NodeId>{0});
  EXPECT_THROW(sample_negatives(2, 0, 2, rng), std::invalid_argument);
}

TEST(Negatives, UniformChiSquare) {
  // 3 negatives from 11 nodes, target 5: each of the 10 others has marginal
  // probability 3/10 per draw.
  KeyedRng rng(5, RngDomain::negatives);
  std::vector<double> counts(11, 0);
  const std::size_t draws = 330000;
  for (std::size_t i = 0; i < draws / 3; ++i)
    for (NodeId v : sample_negatives(3, 5, 11, rng)) ++counts[v];
  EXPECT_EQ(counts[5], 0);
  const double expected = static_cast<double>(draws) / 10;
  double chi2 = 0;
  for (NodeId v = 0; v < 11; ++v)
    if (v != 5) chi2 += (counts[v] - expected) * (counts[v] - expected) / expected;
  EXPECT_LT(chi2, 27.88);  // 9 dof, p = 0.001
}

TEST(Negatives, UnigramFollowsPowerOfCounts) {
  const std::vector<std::uint64_t> visits = {1, 16, 81, 0, 256};
  NegativeSampler sampler(5, NegativeDistribution::unigram75, visits);
  KeyedRng rng(6, RngDomain::negatives);
  std::vector<double> counts(5, 0);
  const std::size_t draws = 200000;
  for (std::size_t i = 0; i < draws; ++i) ++counts[sampler.sample(1, 0, rng)[0]];
  EXPECT_EQ(counts[0], 0);
  EXPECT_EQ(counts[3], 0);
  const double w1 = 8, w2 = 27, w4 = 64, total = w1 + w2 + w4;
  EXPECT_NEAR(counts[1] / draws, w1 / total, 0.005);
  EXPECT_NEAR(counts[2] / draws, w2 / total, 0.005);
  EXPECT_NEAR(counts[4] / draws, w4 / total, 0.005);
  EXPECT_NO_THROW(sampler.sample(3, 1, rng));
  EXPECT_THROW(sampler.sample(4, 1, rng), std::invalid_argument);
}

TEST(Negatives, UniformSamplerDelegates) {
  NegativeSampler sampler(10, NegativeDistribution::uniform);
  KeyedRng a(7, RngDomain::negatives), b(7, RngDomain::negatives);
  EXPECT_EQ(sampler.sample(4, 2, a), sample_negatives(4, 2, 10, b));
}
