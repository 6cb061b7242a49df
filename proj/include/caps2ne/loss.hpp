#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "caps2ne/graph.hpp"
#include "caps2ne/rng.hpp"

namespace caps2ne {

// Row-major table of one k-vector per node (the output embeddings O).
template <std::floating_point Real>
struct EmbeddingTable {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<Real> values;

  EmbeddingTable() = default;
  EmbeddingTable(std::size_t n, std::size_t k) : rows(n), dim(k), values(n * k, Real(0)) {}

  std::span<const Real> row(std::size_t v) const { return {values.data() + v * dim, dim}; }
  std::span<Real> row(std::size_t v) { return {values.data() + v * dim, dim}; }

  bool operator==(const EmbeddingTable&) const = default;
};

template <std::floating_point Real>
struct SampledSoftmaxResult {
  Real loss = 0;
  std::vector<Real> grad_e;        // dL/de, size k
  std::vector<NodeId> rows;        // rows of O touched: target, then negatives
  std::vector<Real> grad_logits;   // dL/d(o_row . e), one per entry of rows
  // dL/do_rows[j] = grad_logits[j] * e
};

// L = -log( exp(o_v.e) / sum_{u in {v} u negatives} exp(o_u.e) ). With
// exclude_positive the denominator sums over the negatives only.
template <std::floating_point Real>
SampledSoftmaxResult<Real> sampled_softmax_loss(std::span<const Real> e, NodeId target,
                                                std::span<const NodeId> negatives, const EmbeddingTable<Real>& O,
                                                bool exclude_positive = false) {
  if (e.size() != O.dim) throw std::invalid_argument("sampled softmax: e and O rows differ in size");
  for (NodeId u : negatives)
    if (u == target) throw std::invalid_argument("sampled softmax: target appears among negatives");
  if (exclude_positive && negatives.empty())
    throw std::invalid_argument("sampled softmax: exclude_positive needs at least one negative");

  SampledSoftmaxResult<Real> out;
  out.rows.reserve(negatives.size() + 1);
  out.rows.push_back(target);
  out.rows.insert(out.rows.end(), negatives.begin(), negatives.end());
  const std::size_t count = out.rows.size();

  std::vector<Real> logits(count);
  for (std::size_t j = 0; j < count; ++j) {
    const auto o = O.row(out.rows[j]);
    Real z = 0;
    for (std::size_t r = 0; r < e.size(); ++r) z += o[r] * e[r];
    logits[j] = z;
  }
  const std::size_t first = exclude_positive ? 1 : 0;
  Real mx = logits[first];
  for (std::size_t j = first; j < count; ++j) mx = std::max(mx, logits[j]);
  Real z = 0;
  for (std::size_t j = first; j < count; ++j) z += std::exp(logits[j] - mx);
  const Real lse = mx + std::log(z);
  out.loss = lse - logits[0];

  out.grad_logits.assign(count, Real(0));
  for (std::size_t j = first; j < count; ++j) out.grad_logits[j] = std::exp(logits[j] - lse);
  out.grad_logits[0] -= Real(1);

  out.grad_e.assign(e.size(), Real(0));
  for (std::size_t j = 0; j < count; ++j) {
    const Real gl = out.grad_logits[j];
    const auto o = O.row(out.rows[j]);
    for (std::size_t r = 0; r < e.size(); ++r) out.grad_e[r] += gl * o[r];
  }
  return out;
}

// `num` distinct ids drawn uniformly from [0, num_nodes) \ {target}
// (Floyd's algorithm over the num_nodes - 1 candidates).
inline std::vector<NodeId> sample_negatives(std::size_t num, NodeId target, std::size_t num_nodes, KeyedRng& rng) {
  if (num_nodes == 0 || num >= num_nodes)
    throw std::invalid_argument("cannot draw " + std::to_string(num) + " distinct negatives from " +
                                std::to_string(num_nodes) + " nodes excluding the target");
  const std::size_t pool = num_nodes - 1;
  std::vector<NodeId> out;
  out.reserve(num);
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(num * 2);
  for (std::size_t j = pool - num; j < pool; ++j) {
    std::uint64_t t = rng.uniform_index(j + 1);
    if (!chosen.insert(t).second) {
      t = j;
      chosen.insert(t);
    }
    out.push_back(static_cast<NodeId>(t >= target ? t + 1 : t));
  }
  return out;
}

enum class NegativeDistribution { uniform, unigram75 };

// Distinct negatives either uniform or proportional to count^0.75 (counts are
// walk visits). Unigram draws use inverse-CDF with rejection of repeats.
class NegativeSampler {
 public:
  NegativeSampler(std::size_t num_nodes, NegativeDistribution dist, std::span<const std::uint64_t> visit_counts = {})
      : num_nodes_(num_nodes), dist_(dist) {
    if (dist_ == NegativeDistribution::unigram75) {
      if (visit_counts.size() != num_nodes) throw std::invalid_argument("unigram sampler needs one count per node");
      cdf_.resize(num_nodes);
      double acc = 0;
      for (std::size_t v = 0; v < num_nodes; ++v) {
        acc += std::pow(static_cast<double>(visit_counts[v]), 0.75);
        cdf_[v] = acc;
        support_ += visit_counts[v] > 0;
      }
      if (acc <= 0) throw std::invalid_argument("unigram sampler: all visit counts are zero");
    }
  }

  std::vector<NodeId> sample(std::size_t num, NodeId target, KeyedRng& rng) const {
    if (dist_ == NegativeDistribution::uniform) return sample_negatives(num, target, num_nodes_, rng);
    const bool target_supported = target < num_nodes_ && weight(target) > 0;
    if (num + (target_supported ? 1 : 0) > support_)
      throw std::invalid_argument("unigram sampler: not enough nodes with nonzero weight");
    std::vector<NodeId> out;
    out.reserve(num);
    std::unordered_set<NodeId> chosen;
    while (out.size() < num) {
      const double x = rng.uniform01() * cdf_.back();
      auto it = std::upper_bound(cdf_.begin(), cdf_.end(), x);
      if (it == cdf_.end()) --it;
      const auto v = static_cast<NodeId>(it - cdf_.begin());
      if (v == target || !chosen.insert(v).second) continue;
      out.push_back(v);
    }
    return out;
  }

  NegativeDistribution distribution() const { return dist_; }

 private:
  double weight(NodeId v) const { return cdf_[v] - (v ? cdf_[v - 1] : 0.0); }

  std::size_t num_nodes_;
  NegativeDistribution dist_;
  std::vector<double> cdf_;
  std::size_t support_ = 0;
};

}  // namespace caps2ne
