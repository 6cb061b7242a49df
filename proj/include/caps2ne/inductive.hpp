#pragma once

#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "caps2ne/capsule.hpp"
#include "caps2ne/graph.hpp"
#include "caps2ne/loss.hpp"
#include "caps2ne/parallel.hpp"
#include "caps2ne/rng.hpp"
#include "caps2ne/walks.hpp"

namespace caps2ne {

struct InductiveConfig {
  std::uint32_t samples = 10;      // Z
  std::uint32_t walk_length = 10;  // q, must match training
  std::uint64_t seed = 1;

  void validate() const {
    if (samples < 1) throw std::invalid_argument("Z must be >= 1");
    if (walk_length < 2) throw std::invalid_argument("q must be >= 2");
  }
};

template <std::floating_point Real>
struct InferenceSamples {
  std::vector<std::vector<NodeId>> contexts;  // Z contexts
  std::vector<std::vector<Real>> outputs;     // e for each context
  std::vector<Real> embedding;                // mean of outputs
};

// Z walks of length q start at v (stream keyed (seed, v, j)); each gives the
// pair (walk[1..q), v). The embedding is the mean of the Z capsule outputs.
template <std::floating_point Real>
InferenceSamples<Real> infer_embedding_samples(const CapsuleWeights<Real>& weights,
                                               const BasicFeatureTable<Real>& features, const RoutingConfig& routing,
                                               const Graph& graph, NodeId v, const InductiveConfig& cfg) {
  cfg.validate();
  if (cfg.walk_length - 1 != weights.capsules)
    throw std::invalid_argument("inference walk length q = " + std::to_string(cfg.walk_length) +
                                " differs from the trained q = " + std::to_string(weights.capsules + 1));
  if (v >= graph.num_nodes()) throw std::out_of_range("node " + std::to_string(v) + " not in graph");
  if (graph.degree(v) == 0)
    throw std::invalid_argument("node " + std::to_string(v) + " is isolated; no context can be sampled");
  InferenceSamples<Real> out;
  out.embedding.assign(weights.out_dim, Real(0));
  for (std::uint32_t j = 0; j < cfg.samples; ++j) {
    KeyedRng rng(cfg.seed, RngDomain::inference, v, j);
    const Walk walk = random_walk(graph, v, cfg.walk_length, rng);
    std::vector<NodeId> context(walk.begin() + 1, walk.end());
    const auto tr = forward<Real>(context, weights, features, routing);
    const auto e = tr.e();
    for (std::size_t r = 0; r < e.size(); ++r) out.embedding[r] += e[r];
    out.contexts.push_back(std::move(context));
    out.outputs.emplace_back(e.begin(), e.end());
  }
  for (auto& x : out.embedding) x /= static_cast<Real>(cfg.samples);
  return out;
}

template <std::floating_point Real>
std::vector<Real> infer_embedding(const CapsuleWeights<Real>& weights, const BasicFeatureTable<Real>& features,
                                  const RoutingConfig& routing, const Graph& graph, NodeId v,
                                  const InductiveConfig& cfg) {
  return infer_embedding_samples(weights, features, routing, graph, v, cfg).embedding;
}

// Embeddings for several new nodes, one row per entry of `nodes`.
template <std::floating_point Real>
EmbeddingTable<Real> infer_embeddings(const CapsuleWeights<Real>& weights, const BasicFeatureTable<Real>& features,
                                      const RoutingConfig& routing, const Graph& graph,
                                      std::span<const NodeId> nodes, const InductiveConfig& cfg,
                                      unsigned threads = 1) {
  EmbeddingTable<Real> out(nodes.size(), weights.out_dim);
  parallel_for(nodes.size(), threads, [&](unsigned, std::size_t i) {
    const auto e = infer_embedding(weights, features, routing, graph, nodes[i], cfg);
    std::copy(e.begin(), e.end(), out.row(i).begin());
  });
  return out;
}

}  // namespace caps2ne
