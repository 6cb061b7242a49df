#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "caps2ne/capsule.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace caps2ne;

namespace {

double norm(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

std::vector<double> random_vector(KeyedRng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

struct Instance {
  CapsuleWeights<double> W;
  BasicFeatureTable<double> X;
  std::vector<NodeId> context;
};

Instance random_instance(std::size_t q, std::size_t d, std::size_t k, std::uint64_t seed) {
  KeyedRng rng(seed, RngDomain::weights, 1234);
  Instance in{CapsuleWeights<double>(q - 1, k, d), BasicFeatureTable<double>(q - 1, d, FeatureSource::learned), {}};
  for (auto& v : in.W.values) v = rng.uniform(-1, 1);
  for (auto& v : in.X.mutable_values()) v = rng.uniform(-1, 1);
  in.context.resize(q - 1);
  std::iota(in.context.begin(), in.context.end(), NodeId{0});
  return in;
}

}  // namespace

TEST(Squash, ZeroMapsToZero) {
  const std::vector<double> zero(5, 0.0);
  for (double v : squash(zero)) EXPECT_EQ(v, 0.0);
}

TEST(Squash, UnitNormHalves) {
  const std::vector<double> x = {0.6, 0.0, -0.8};
  const auto y = squash(x);
  EXPECT_NEAR(norm(y), 0.5, 1e-12);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], 0.5 * x[i], 1e-12);
}

TEST(Squash, LargeNormApproachesOne) {
  const std::vector<double> x = {1e6, -2e6};
  const double n = norm(squash(x));
  EXPECT_LT(n, 1.0);
  EXPECT_GT(n, 1.0 - 1e-9);
}

TEST(Squash, DirectionInvariantAndNormIncreasing) {
  KeyedRng rng(3, RngDomain::weights);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_vector(rng, 1 + rng.uniform_index(10));
    const double alpha = rng.uniform(0.01, 10);
    std::vector<double> ax(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) ax[i] = alpha * x[i];
    const auto y = squash(x), ay = squash(ax);
    const double cos = oracle::dot(y, ay) / (norm(y) * norm(ay));
    EXPECT_NEAR(cos, 1.0, 1e-12);
    EXPECT_EQ(norm(ay) > norm(y), alpha > 1);
    EXPECT_LT(norm(ay), 1.0);
  }
}

TEST(Squash, VjpMatchesFiniteDifferences) {
  KeyedRng rng(4, RngDomain::weights);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_vector(rng, 2 + rng.uniform_index(6), 2.0);
    const auto g = random_vector(rng, x.size());
    std::vector<double> analytic(x.size());
    squash_vjp<double>(x, g, analytic);
    const auto fd = oracle::central_difference([&] { return oracle::dot(g, oracle::squash_ref(x)); }, x, 1e-6);
    EXPECT_LT(oracle::max_relative_error(analytic, fd), 1e-6);
  }
}

TEST(Route, SingleIterationUsesUniformCoupling) {
  KeyedRng rng(5, RngDomain::weights);
  const std::size_t n = 4, k = 3;
  const auto u_hat = random_vector(rng, n * k);
  const auto tr = route<double>(u_hat, n, k, {1, RoutingRule::ours, false});
  for (double c : tr.coupling_at(0)) EXPECT_DOUBLE_EQ(c, 0.25);
  std::vector<double> mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < k; ++r) mean[r] += 0.25 * u_hat[i * k + r];
  const auto expected = squash(mean);
  for (std::size_t r = 0; r < k; ++r) EXPECT_NEAR(tr.output()[r], expected[r], 1e-15);
}

TEST(Route, RulesAgreeExactlyAtOneIteration) {
  KeyedRng rng(6, RngDomain::weights);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(9), k = 2 + rng.uniform_index(7);
    const auto u_hat = random_vector(rng, n * k);
    const auto a = route<double>(u_hat, n, k, {1, RoutingRule::ours, false});
    const auto b = route<double>(u_hat, n, k, {1, RoutingRule::sabour, false});
    EXPECT_TRUE(std::equal(a.output().begin(), a.output().end(), b.output().begin()));
  }
}

TEST(Route, SingleCapsuleReturnsSquashedInput) {
  const std::vector<double> u_hat = {0.3, -1.2, 2.0};
  for (auto rule : {RoutingRule::ours, RoutingRule::sabour})
    for (std::uint32_t m : {1u, 3u, 7u}) {
      const auto tr = route<double>(u_hat, 1, 3, {m, rule, false});
      for (std::size_t t = 0; t < m; ++t) EXPECT_EQ(tr.coupling_at(t)[0], 1.0);
      const auto expected = squash(u_hat);
      EXPECT_TRUE(std::equal(expected.begin(), expected.end(), tr.output().begin()));
    }
}

TEST(Route, CouplingIsProbabilityVectorEveryIteration) {
  KeyedRng rng(7, RngDomain::weights);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(8), k = 2 + rng.uniform_index(7);
    const auto u_hat = random_vector(rng, n * k, 3.0);
    for (auto rule : {RoutingRule::ours, RoutingRule::sabour}) {
      const auto tr = route<double>(u_hat, n, k, {7, rule, false});
      for (std::size_t t = 0; t < 7; ++t) {
        const auto c = tr.coupling_at(t);
        EXPECT_NEAR(std::accumulate(c.begin(), c.end(), 0.0), 1.0, 1e-9);
        for (double v : c) EXPECT_GE(v, 0.0);
      }
      EXPECT_LT(norm(tr.output()), 1.0);
    }
  }
}

TEST(Route, RulesDifferBeyondOneIteration) {
  KeyedRng rng(8, RngDomain::weights);
  const auto u_hat = random_vector(rng, 5 * 4, 2.0);
  const auto a = route<double>(u_hat, 5, 4, {3, RoutingRule::ours, false});
  const auto b = route<double>(u_hat, 5, 4, {3, RoutingRule::sabour, false});
  double diff = 0;
  for (std::size_t r = 0; r < 4; ++r) diff = std::max(diff, std::abs(a.output()[r] - b.output()[r]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Forward, ExampleDimensions) {
  auto in = random_instance(6, 4, 3, 1);
  const auto tr = forward<double>(in.context, in.W, in.X, {3, RoutingRule::ours, false});
  EXPECT_EQ(tr.capsules, 5u);
  EXPECT_EQ(tr.u.size(), 5u * 4);
  EXPECT_EQ(tr.u_hat.size(), 5u * 3);
  EXPECT_EQ(tr.e().size(), 3u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_LT(norm(tr.u_at(i)), 1.0);
  EXPECT_LT(norm(tr.e()), 1.0);
}

TEST(Forward, MatchesReferenceTranscription) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const std::size_t q = 3 + seed % 8, d = 2 + seed % 5, k = 2 + (seed * 7) % 6, m = 1 + 2 * (seed % 4);
    auto in = random_instance(q, d, k, seed);
    for (auto rule : {RoutingRule::ours, RoutingRule::sabour}) {
      const auto tr = forward<double>(in.context, in.W, in.X, {static_cast<std::uint32_t>(m), rule, false});
      std::vector<oracle::Vec> Wm(q - 1), xs(q - 1);
      for (std::size_t i = 0; i + 1 < q; ++i) {
        Wm[i].assign(in.W.matrix(i).begin(), in.W.matrix(i).end());
        xs[i].assign(in.X.row(static_cast<NodeId>(i)).begin(), in.X.row(static_cast<NodeId>(i)).end());
      }
      const auto ref = oracle::capsule_forward_ref(Wm, xs, k, m, rule == RoutingRule::sabour);
      for (std::size_t r = 0; r < k; ++r) EXPECT_NEAR(tr.e()[r], ref[r], 1e-13);
    }
  }
}

TEST(Forward, ZeroInputsOrZeroWeightsGiveZeroOutput) {
  auto in = random_instance(6, 4, 3, 2);
  BasicFeatureTable<double> zeros(5, 4, FeatureSource::learned);
  const auto a = forward<double>(in.context, in.W, zeros, {3, RoutingRule::ours, false});
  for (double v : a.e()) EXPECT_EQ(v, 0.0);
  CapsuleWeights<double> zero_w(5, 3, 4);
  const auto b = forward<double>(in.context, zero_w, in.X, {3, RoutingRule::sabour, false});
  for (double v : b.e()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ContextLengthMismatchIsShapeError) {
  auto in = random_instance(6, 4, 3, 3);
  std::vector<NodeId> short_context = {0, 1, 2};
  EXPECT_THROW(forward<double>(short_context, in.W, in.X, {}), std::invalid_argument);
}

TEST(Forward, SparseInputsMatchDensePath) {
  KeyedRng rng(9, RngDomain::weights);
  const std::size_t n = 4, d = 30, k = 5;
  std::ostringstream triplets;
  for (NodeId v = 0; v < n; ++v)
    for (int j = 0; j < 3; ++j) triplets << v << ' ' << j * 10 + rng.uniform_index(10) << ' ' << 1 << '\n';
  std::istringstream in(triplets.str());
  const auto sparse = load_features(in, d, n);
  BasicFeatureTable<double> dense(n, d, FeatureSource::learned);
  for (std::size_t i = 0; i < sparse.values().size(); ++i) dense.mutable_values()[i] = sparse.values()[i];
  ASSERT_TRUE(sparse.sparse());
  ASSERT_FALSE(dense.sparse());
  const auto W = init_capsule_weights<double>(n, k, d, 4);
  const std::vector<NodeId> context = {0, 1, 2, 3};
  const RoutingConfig cfg{3, RoutingRule::ours, false};
  const auto ts = forward<double>(context, W, sparse, cfg), td = forward<double>(context, W, dense, cfg);
  for (std::size_t r = 0; r < k; ++r) EXPECT_NEAR(ts.e()[r], td.e()[r], 1e-15);
  const std::vector<double> g = {1, -1, 0.5, 0.2, 0.3};
  const auto gs = backward<double>(ts, W, g, cfg, false).dense_weights(ts);
  const auto gd = backward<double>(td, W, g, cfg, false).dense_weights(td);
  for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_NEAR(gs[i], gd[i], 1e-15);
}

TEST(Forward, PermutationCovariance) {
  auto in = random_instance(7, 3, 4, 5);
  const RoutingConfig cfg{5, RoutingRule::sabour, false};
  const auto base = forward<double>(in.context, in.W, in.X, cfg);
  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  std::vector<NodeId> ctx(6);
  CapsuleWeights<double> W(6, 4, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    ctx[i] = in.context[perm[i]];
    std::copy(in.W.matrix(perm[i]).begin(), in.W.matrix(perm[i]).end(), W.matrix(i).begin());
  }
  const auto permuted = forward<double>(ctx, W, in.X, cfg);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(base.e()[r], permuted.e()[r], 1e-14);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  auto in = random_instance(6, 4, 3, 6);
  const RoutingConfig cfg{3, RoutingRule::ours, false};
  const auto tr = forward<double>(in.context, in.W, in.X, cfg);
  const std::vector<double> zero(3, 0.0);
  const auto g = backward<double>(tr, in.W, zero, cfg, true);
  for (double v : g.dense_weights(tr)) EXPECT_EQ(v, 0.0);
  for (double v : g.inputs) EXPECT_EQ(v, 0.0);
}

TEST(Backward, MismatchedTraceRejected) {
  auto in = random_instance(6, 4, 3, 6);
  const RoutingConfig cfg{3, RoutingRule::ours, false};
  const auto tr = forward<double>(in.context, in.W, in.X, cfg);
  const std::vector<double> g(3, 1.0);
  CapsuleWeights<double> other(5, 3, 5);
  EXPECT_THROW(backward<double>(tr, other, g, cfg, true), std::invalid_argument);
  EXPECT_THROW(backward<double>(tr, in.W, g, RoutingConfig{2, RoutingRule::ours, false}, true), std::invalid_argument);
}

TEST(Backward, SmallInstanceMatchesFiniteDifferences) {
  for (auto rule : {RoutingRule::ours, RoutingRule::sabour}) {
    const auto res = caps2ne::testing::gradient_check({6, 4, 3, 3, rule, 11});
    EXPECT_LE(res.max_rel_error(), 1e-4);
  }
}

TEST(Backward, RandomInstancesMatchFiniteDifferences) {
  KeyedRng rng(12, RngDomain::weights);
  const std::size_t ms[] = {1, 3, 5};
  for (int t = 0; t < 100; ++t) {
    caps2ne::testing::GradCheckInstance inst;
    inst.q = 3 + rng.uniform_index(8);
    inst.d = 2 + rng.uniform_index(7);
    inst.k = 2 + rng.uniform_index(7);
    inst.m = ms[rng.uniform_index(3)];
    inst.rule = t % 2 ? RoutingRule::sabour : RoutingRule::ours;
    inst.seed = 1000 + t;
    EXPECT_LE(caps2ne::testing::gradient_check(inst).max_rel_error(), 1e-4)
        << "q=" << inst.q << " d=" << inst.d << " k=" << inst.k << " m=" << inst.m;
  }
}

// m = 1, two capsules, k = d = 2: e = squash((u_hat_1 + u_hat_2) / 2), so
// dL/dW_i = (1/2) J(s) g u_i^T and dL/dx_i = J(x_i) W_i^T (1/2) J(s) g with
// J(y) = a I + b y y^T, a = n/(1+n^2), b = (1-n^2)/(n (1+n^2)^2).
TEST(Backward, SingleIterationClosedForm) {
  auto jac_apply = [](const oracle::Vec& y, const oracle::Vec& v) {
    const double n = std::sqrt(oracle::dot(y, y));
    const double a = n / (1 + n * n);
    const double b = (1 - n * n) / (n * (1 + n * n) * (1 + n * n));
    oracle::Vec out(2);
    const double yv = oracle::dot(y, v);
    for (int j = 0; j < 2; ++j) out[j] = a * v[j] + b * y[j] * yv;
    return out;
  };
  auto in = random_instance(3, 2, 2, 21);
  const std::vector<double> g = {0.7, -0.4};
  for (bool stop : {false, true}) {
    const RoutingConfig cfg{1, RoutingRule::ours, stop};
    const auto tr = forward<double>(in.context, in.W, in.X, cfg);
    const auto grads = backward<double>(tr, in.W, g, cfg, true);
    const auto dW = grads.dense_weights(tr);

    oracle::Vec s(2, 0.0);
    std::vector<oracle::Vec> u(2);
    for (int i = 0; i < 2; ++i) {
      u[i] = oracle::squash_ref({in.X.row(i)[0], in.X.row(i)[1]});
      for (int r = 0; r < 2; ++r) s[r] += 0.5 * (in.W.at(i, r, 0) * u[i][0] + in.W.at(i, r, 1) * u[i][1]);
    }
    const auto Jg = jac_apply(s, {g[0], g[1]});
    for (int i = 0; i < 2; ++i) {
      oracle::Vec wt(2, 0.0);
      for (int r = 0; r < 2; ++r)
        for (int j = 0; j < 2; ++j) {
          EXPECT_NEAR(dW[(i * 2 + r) * 2 + j], 0.5 * Jg[r] * u[i][j], 1e-9);
          wt[j] += in.W.at(i, r, j) * 0.5 * Jg[r];
        }
      const auto dx = jac_apply({in.X.row(i)[0], in.X.row(i)[1]}, wt);
      for (int j = 0; j < 2; ++j) EXPECT_NEAR(grads.inputs[i * 2 + j], dx[j], 1e-9);
    }
  }
}

// With stop_gradient the coupling coefficients of the last iteration are
// constants: dL/du_hat_i = c_i J(s)^T g.
TEST(Backward, StopGradientHoldsCouplingConstant) {
  auto in = random_instance(5, 3, 4, 31);
  const RoutingConfig cfg{3, RoutingRule::ours, true};
  const auto tr = forward<double>(in.context, in.W, in.X, cfg);
  const std::vector<double> g = {0.1, 0.2, -0.3, 0.4};
  const auto grads = backward<double>(tr, in.W, g, cfg, false);
  std::vector<double> js(4);
  squash_vjp<double>(tr.routing.s_at(2), g, js);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t r = 0; r < 4; ++r)
      EXPECT_NEAR(grads.u_hat[i * 4 + r], tr.routing.coupling_at(2)[i] * js[r], 1e-15);
  EXPECT_TRUE(grads.inputs.empty());
}

TEST(Weights, InitWithinBoundsAndDeterministic) {
  const auto a = init_capsule_weights<double>(9, 128, 64, 3);
  EXPECT_EQ(a, init_capsule_weights<double>(9, 128, 64, 3));
  const double bound = std::sqrt(6.0 / (64 + 128));
  for (double v : a.values) EXPECT_LE(std::abs(v), bound);
}

TEST(Precision, FloatForwardTracksDouble) {
  auto in = random_instance(6, 4, 3, 41);
  CapsuleWeights<float> Wf(5, 3, 4);
  for (std::size_t i = 0; i < Wf.values.size(); ++i) Wf.values[i] = static_cast<float>(in.W.values[i]);
  const auto Xf = in.X.cast<float>();
  const auto ed = forward<double>(in.context, in.W, in.X, {3, RoutingRule::ours, false});
  const auto ef = forward<float>(in.context, Wf, Xf, {3, RoutingRule::ours, false});
  for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(ef.e()[r], ed.e()[r], 1e-5);
}
