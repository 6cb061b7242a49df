#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "caps2ne/graph.hpp"
#include "caps2ne/rng.hpp"

namespace caps2ne {

inline constexpr double kSquashEpsilon = 1e-12;

// squash(x) = |x|^2 / (1 + |x|^2) * x / (|x| + eps)
template <std::floating_point Real>
void squash(std::span<const Real> x, std::span<Real> out) {
  Real n2 = 0;
  for (Real v : x) n2 += v * v;
  const Real n = std::sqrt(n2);
  const Real scale = n2 / ((Real(1) + n2) * (n + Real(kSquashEpsilon)));
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = scale * x[j];
}

template <std::floating_point Real>
std::vector<Real> squash(std::span<const Real> x) {
  std::vector<Real> out(x.size());
  squash<Real>(x, out);
  return out;
}

template <std::floating_point Real>
std::vector<Real> squash(const std::vector<Real>& x) {
  return squash<Real>(std::span<const Real>(x));
}

// Vector-Jacobian product of squash at x: out = J(x)^T g. J is symmetric:
// J = a I + (a'(n)/n) x x^T with a(n) = n^2 / ((1+n^2)(n+eps)).
template <std::floating_point Real>
void squash_vjp(std::span<const Real> x, std::span<const Real> g, std::span<Real> out) {
  Real n2 = 0, xg = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    n2 += x[j] * x[j];
    xg += x[j] * g[j];
  }
  const Real n = std::sqrt(n2);
  const Real eps = Real(kSquashEpsilon);
  const Real one_n2 = Real(1) + n2;
  const Real a = n2 / (one_n2 * (n + eps));
  Real beta = 0;
  if (n > Real(0)) {
    const Real den = one_n2 * (n + eps);
    beta = (n + Real(2) * eps - n2 * n) / (den * den);
  }
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = a * g[j] + beta * x[j] * xg;
}

enum class RoutingRule {
  ours,    // b_i <- u_hat_i . e
  sabour,  // b_i <- b_i + u_hat_i . e
};

struct RoutingConfig {
  std::uint32_t iterations = 1;  // m
  RoutingRule rule = RoutingRule::ours;
  // Treat the final coupling coefficients as constants in backward.
  bool stop_gradient = false;

  void validate() const {
    if (iterations < 1) throw std::invalid_argument("routing iterations m must be >= 1");
  }
};

template <std::floating_point Real>
struct RouteTrace {
  std::size_t capsules = 0;    // n = q - 1
  std::size_t dim = 0;         // k
  std::size_t iterations = 0;  // m
  std::vector<Real> logits;    // m x n, b entering iteration t
  std::vector<Real> coupling;  // m x n, c = softmax(b)
  std::vector<Real> pre;       // m x k, s
  std::vector<Real> post;      // m x k, e = squash(s)

  std::span<const Real> coupling_at(std::size_t t) const { return {coupling.data() + t * capsules, capsules}; }
  std::span<const Real> logits_at(std::size_t t) const { return {logits.data() + t * capsules, capsules}; }
  std::span<const Real> s_at(std::size_t t) const { return {pre.data() + t * dim, dim}; }
  std::span<const Real> e_at(std::size_t t) const { return {post.data() + t * dim, dim}; }
  std::span<const Real> output() const { return e_at(iterations - 1); }
};

template <std::floating_point Real>
void softmax(std::span<const Real> b, std::span<Real> c) {
  const Real mx = *std::max_element(b.begin(), b.end());
  Real z = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    c[i] = std::exp(b[i] - mx);
    z += c[i];
  }
  for (auto& v : c) v /= z;
}

// Routing from n lower capsules (u_hat, row-major n x k) to one upper capsule.
template <std::floating_point Real>
RouteTrace<Real> route(std::span<const Real> u_hat, std::size_t n, std::size_t k, const RoutingConfig& cfg) {
  cfg.validate();
  if (n < 1 || u_hat.size() != n * k) throw std::invalid_argument("route: u_hat must hold n >= 1 vectors of size k");
  RouteTrace<Real> tr;
  tr.capsules = n;
  tr.dim = k;
  tr.iterations = cfg.iterations;
  tr.logits.assign(tr.iterations * n, Real(0));
  tr.coupling.assign(tr.iterations * n, Real(0));
  tr.pre.assign(tr.iterations * k, Real(0));
  tr.post.assign(tr.iterations * k, Real(0));
  std::vector<Real> b(n, Real(0));
  for (std::size_t t = 0; t < tr.iterations; ++t) {
    std::copy(b.begin(), b.end(), tr.logits.begin() + t * n);
    std::span<Real> c(tr.coupling.data() + t * n, n);
    softmax<Real>(b, c);
    std::span<Real> s(tr.pre.data() + t * k, k);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < k; ++r) s[r] += c[i] * u_hat[i * k + r];
    std::span<Real> e(tr.post.data() + t * k, k);
    squash<Real>(std::span<const Real>(s), e);
    for (std::size_t i = 0; i < n; ++i) {
      Real agreement = 0;
      for (std::size_t r = 0; r < k; ++r) agreement += u_hat[i * k + r] * e[r];
      b[i] = cfg.rule == RoutingRule::ours ? agreement : b[i] + agreement;
    }
  }
  return tr;
}

// Position-indexed transforms W_1..W_n, each k x d row-major, shared by all
// pairs.
template <std::floating_point Real>
struct CapsuleWeights {
  std::size_t capsules = 0;  // n = q - 1
  std::size_t out_dim = 0;   // k
  std::size_t in_dim = 0;    // d
  std::vector<Real> values;

  CapsuleWeights() = default;
  CapsuleWeights(std::size_t n, std::size_t k, std::size_t d)
      : capsules(n), out_dim(k), in_dim(d), values(n * k * d, Real(0)) {}

  std::span<const Real> matrix(std::size_t i) const { return {values.data() + i * out_dim * in_dim, out_dim * in_dim}; }
  std::span<Real> matrix(std::size_t i) { return {values.data() + i * out_dim * in_dim, out_dim * in_dim}; }
  Real& at(std::size_t i, std::size_t r, std::size_t j) { return values[(i * out_dim + r) * in_dim + j]; }
  Real at(std::size_t i, std::size_t r, std::size_t j) const { return values[(i * out_dim + r) * in_dim + j]; }

  bool operator==(const CapsuleWeights&) const = default;
};

// W entries i.i.d. uniform on [-sqrt(6/(d+k)), sqrt(6/(d+k))].
template <std::floating_point Real>
CapsuleWeights<Real> init_capsule_weights(std::size_t n, std::size_t k, std::size_t d, std::uint64_t seed) {
  CapsuleWeights<Real> w(n, k, d);
  const double bound = std::sqrt(6.0 / static_cast<double>(d + k));
  for (std::size_t i = 0; i < n; ++i) {
    KeyedRng rng(seed, RngDomain::weights, i);
    for (auto& v : w.matrix(i)) v = static_cast<Real>(rng.uniform(-bound, bound));
  }
  return w;
}

template <std::floating_point Real>
struct ForwardTrace {
  std::vector<NodeId> context;
  std::size_t capsules = 0, out_dim = 0, in_dim = 0;
  std::vector<Real> inputs;  // x_{v_i}, n x d
  std::vector<Real> u;       // squash(x), n x d
  std::vector<Real> u_hat;   // W_i u_i, n x k
  // Nonzero columns of each x_{v_i}; empty when inputs are dense.
  std::vector<std::vector<std::uint32_t>> support;
  RouteTrace<Real> routing;

  std::span<const Real> e() const { return routing.output(); }
  std::span<const Real> u_at(std::size_t i) const { return {u.data() + i * in_dim, in_dim}; }
  std::span<const Real> u_hat_at(std::size_t i) const { return {u_hat.data() + i * out_dim, out_dim}; }
  std::span<const Real> input_at(std::size_t i) const { return {inputs.data() + i * in_dim, in_dim}; }
};

template <std::floating_point Real>
ForwardTrace<Real> forward(std::span<const NodeId> context, const CapsuleWeights<Real>& weights,
                           const BasicFeatureTable<Real>& features, const RoutingConfig& cfg) {
  const std::size_t n = weights.capsules, k = weights.out_dim, d = weights.in_dim;
  if (context.size() != n)
    throw std::invalid_argument("forward: context has " + std::to_string(context.size()) + " nodes but there are " +
                                std::to_string(n) + " transform matrices");
  if (features.dim() != d) throw std::invalid_argument("forward: feature dimension differs from W column count");
  ForwardTrace<Real> tr;
  tr.context.assign(context.begin(), context.end());
  tr.capsules = n;
  tr.out_dim = k;
  tr.in_dim = d;
  tr.inputs.assign(n * d, Real(0));
  tr.u.assign(n * d, Real(0));
  tr.u_hat.assign(n * k, Real(0));
  const bool sparse = features.sparse();
  if (sparse) tr.support.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const NodeId v = context[i];
    if (v >= features.num_nodes()) throw std::out_of_range("forward: context node " + std::to_string(v) + " has no feature row");
    const auto x = features.row(v);
    std::span<Real> u(tr.u.data() + i * d, d);
    const auto W = weights.matrix(i);
    Real* uh = tr.u_hat.data() + i * k;
    if (sparse) {
      const auto cols = features.support(v);
      tr.support[i].assign(cols.begin(), cols.end());
      Real n2 = 0;
      for (auto j : cols) {
        tr.inputs[i * d + j] = x[j];
        n2 += x[j] * x[j];
      }
      // same arithmetic as squash(), restricted to the nonzeros
      const Real norm = std::sqrt(n2);
      const Real scale = n2 / ((Real(1) + n2) * (norm + Real(kSquashEpsilon)));
      for (auto j : cols) u[j] = scale * x[j];
      for (std::size_t r = 0; r < k; ++r) {
        Real acc = 0;
        for (auto j : cols) acc += W[r * d + j] * u[j];
        uh[r] = acc;
      }
    } else {
      std::copy(x.begin(), x.end(), tr.inputs.begin() + i * d);
      squash<Real>(x, u);
      for (std::size_t r = 0; r < k; ++r) {
        Real acc = 0;
        const Real* row = W.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) acc += row[j] * u[j];
        uh[r] = acc;
      }
    }
  }
  tr.routing = route<Real>(tr.u_hat, n, k, cfg);
  return tr;
}

template <std::floating_point Real>
struct CapsuleGradients {
  std::vector<Real> u_hat;   // dL/du_hat, n x k
  std::vector<Real> inputs;  // dL/dx_{v_i}, n x d; empty unless requested

  // dW += scale * dL/du_hat_i (outer) u_i, touching only nonzero columns.
  void accumulate_weights(const ForwardTrace<Real>& tr, std::span<Real> dW, Real scale = Real(1)) const {
    const std::size_t n = tr.capsules, k = tr.out_dim, d = tr.in_dim;
    for (std::size_t i = 0; i < n; ++i) {
      const auto u = tr.u_at(i);
      Real* block = dW.data() + i * k * d;
      for (std::size_t r = 0; r < k; ++r) {
        const Real g = scale * u_hat[i * k + r];
        if (g == Real(0)) continue;
        Real* row = block + r * d;
        if (!tr.support.empty()) {
          for (auto j : tr.support[i]) row[j] += g * u[j];
        } else {
          for (std::size_t j = 0; j < d; ++j) row[j] += g * u[j];
        }
      }
    }
  }

  std::vector<Real> dense_weights(const ForwardTrace<Real>& tr) const {
    std::vector<Real> dW(tr.capsules * tr.out_dim * tr.in_dim, Real(0));
    accumulate_weights(tr, dW);
    return dW;
  }
};

// Reverse mode through squash, the transforms and all m unrolled routing
// iterations (c depends on b, b on u_hat and e). With cfg.stop_gradient the
// final coupling coefficients are held constant instead.
template <std::floating_point Real>
CapsuleGradients<Real> backward(const ForwardTrace<Real>& tr, const CapsuleWeights<Real>& weights,
                                std::span<const Real> grad_e, const RoutingConfig& cfg, bool input_gradients) {
  const std::size_t n = tr.capsules, k = tr.out_dim, d = tr.in_dim, m = tr.routing.iterations;
  if (weights.capsules != n || weights.out_dim != k || weights.in_dim != d)
    throw std::invalid_argument("backward: trace shape does not match weights");
  if (m != cfg.iterations) throw std::invalid_argument("backward: trace iteration count does not match config");
  if (grad_e.size() != k) throw std::invalid_argument("backward: dL/de must have size k");

  CapsuleGradients<Real> g;
  g.u_hat.assign(n * k, Real(0));
  std::vector<Real> g_e(k), g_s(k), g_c(n), g_b(n, Real(0)), carry(n);

  if (cfg.stop_gradient) {
    squash_vjp<Real>(tr.routing.s_at(m - 1), grad_e, g_s);
    const auto c = tr.routing.coupling_at(m - 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < k; ++r) g.u_hat[i * k + r] += c[i] * g_s[r];
  } else {
    for (std::size_t t = m; t-- > 0;) {
      if (t == m - 1)
        std::copy(grad_e.begin(), grad_e.end(), g_e.begin());
      else
        std::fill(g_e.begin(), g_e.end(), Real(0));
      std::fill(carry.begin(), carry.end(), Real(0));
      if (t + 1 < m) {
        // g_b holds dL/db produced at the end of iteration t.
        const auto e = tr.routing.e_at(t);
        for (std::size_t i = 0; i < n; ++i) {
          const Real gb = g_b[i];
          if (gb == Real(0)) continue;
          for (std::size_t r = 0; r < k; ++r) {
            g.u_hat[i * k + r] += gb * e[r];
            g_e[r] += gb * tr.u_hat[i * k + r];
          }
        }
        if (cfg.rule == RoutingRule::sabour) carry = g_b;
      }
      squash_vjp<Real>(tr.routing.s_at(t), g_e, g_s);
      const auto c = tr.routing.coupling_at(t);
      Real weighted = 0;
      for (std::size_t i = 0; i < n; ++i) {
        Real gc = 0;
        for (std::size_t r = 0; r < k; ++r) {
          g.u_hat[i * k + r] += c[i] * g_s[r];
          gc += tr.u_hat[i * k + r] * g_s[r];
        }
        g_c[i] = gc;
        weighted += c[i] * gc;
      }
      for (std::size_t i = 0; i < n; ++i) g_b[i] = c[i] * (g_c[i] - weighted) + carry[i];
    }
  }

  if (input_gradients) {
    g.inputs.assign(n * d, Real(0));
    std::vector<Real> g_u(d);
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(g_u.begin(), g_u.end(), Real(0));
      const auto W = weights.matrix(i);
      for (std::size_t r = 0; r < k; ++r) {
        const Real gr = g.u_hat[i * k + r];
        if (gr == Real(0)) continue;
        const Real* row = W.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) g_u[j] += gr * row[j];
      }
      squash_vjp<Real>(tr.input_at(i), g_u, std::span<Real>(g.inputs.data() + i * d, d));
    }
  }
  return g;
}

}  // namespace caps2ne
