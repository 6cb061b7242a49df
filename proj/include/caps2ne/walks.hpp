#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "caps2ne/graph.hpp"
#include "caps2ne/log.hpp"
#include "caps2ne/parallel.hpp"
#include "caps2ne/rng.hpp"

namespace caps2ne {

enum class TargetStrategy { random_one, rotate_all, fixed_indexes };

struct WalkConfig {
  std::uint32_t walks_per_node = 64;  // T
  std::uint32_t walk_length = 10;     // q
  TargetStrategy target_strategy = TargetStrategy::rotate_all;
  std::vector<std::uint32_t> fixed_indexes;  // 0-based walk positions
  std::uint64_t seed = 1;

  void validate() const {
    if (walk_length < 2) throw std::invalid_argument("walk length q must be >= 2");
    if (walks_per_node < 1) throw std::invalid_argument("walks per node T must be >= 1");
    if (target_strategy == TargetStrategy::fixed_indexes) {
      if (fixed_indexes.empty()) throw std::invalid_argument("fixed target strategy needs at least one index");
      for (auto i : fixed_indexes)
        if (i >= walk_length)
          throw std::invalid_argument("target index " + std::to_string(i) + " outside walk of length " +
                                      std::to_string(walk_length));
    }
  }

  std::size_t context_size() const { return walk_length - 1; }

  std::size_t pairs_per_walk() const {
    switch (target_strategy) {
      case TargetStrategy::random_one: return 1;
      case TargetStrategy::rotate_all: return walk_length;
      case TargetStrategy::fixed_indexes: return fixed_indexes.size();
    }
    return 0;
  }
};

using Walk = std::vector<NodeId>;

struct ContextPair {
  NodeId target = 0;
  std::vector<NodeId> context;  // walk order, target position removed
  bool operator==(const ContextPair&) const = default;
};

// One uniform random walk of `length` nodes starting at `start`. Isolated
// start nodes yield a walk repeating the start node.
inline Walk random_walk(const Graph& g, NodeId start, std::uint32_t length, KeyedRng& rng) {
  Walk walk;
  walk.reserve(length);
  walk.push_back(start);
  NodeId current = start;
  for (std::uint32_t step = 1; step < length; ++step) {
    const auto nbrs = g.neighbors(current);
    if (nbrs.empty()) {
      walk.push_back(current);
      continue;
    }
    current = nbrs[rng.uniform_index(nbrs.size())];
    walk.push_back(current);
  }
  return walk;
}

// Walk `index` of node `start`, drawn from the stream keyed (seed, start, index).
inline Walk sample_walk(const Graph& g, NodeId start, std::uint32_t index, const WalkConfig& cfg) {
  KeyedRng rng(cfg.seed, RngDomain::walk, start, index);
  return random_walk(g, start, cfg.walk_length, rng);
}

// T walks per node, ordered node-major: walk (v, t) sits at v * T + t.
inline std::vector<Walk> sample_walks(const Graph& g, const WalkConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  std::size_t isolated = 0;
  for (NodeId v = 0; v < g.num_nodes(); ++v) isolated += g.degree(v) == 0;
  if (isolated > 0)
    log_warning(std::to_string(isolated) + " isolated node(s): their walks repeat the start node");
  const std::size_t T = cfg.walks_per_node;
  std::vector<Walk> walks(g.num_nodes() * T);
  parallel_for(walks.size(), threads, [&](unsigned, std::size_t i) {
    walks[i] = sample_walk(g, static_cast<NodeId>(i / T), static_cast<std::uint32_t>(i % T), cfg);
  });
  return walks;
}

inline ContextPair make_pair_at(std::span<const NodeId> walk, std::size_t position) {
  ContextPair pair;
  pair.target = walk[position];
  pair.context.reserve(walk.size() - 1);
  for (std::size_t i = 0; i < walk.size(); ++i)
    if (i != position) pair.context.push_back(walk[i]);
  return pair;
}

inline std::vector<ContextPair> extract_pairs(std::span<const NodeId> walk, const WalkConfig& cfg, KeyedRng& rng) {
  if (walk.size() != cfg.walk_length)
    throw std::invalid_argument("walk has " + std::to_string(walk.size()) + " nodes, expected q = " +
                                std::to_string(cfg.walk_length));
  std::vector<ContextPair> pairs;
  switch (cfg.target_strategy) {
    case TargetStrategy::random_one:
      pairs.push_back(make_pair_at(walk, rng.uniform_index(walk.size())));
      break;
    case TargetStrategy::rotate_all:
      for (std::size_t p = 0; p < walk.size(); ++p) pairs.push_back(make_pair_at(walk, p));
      break;
    case TargetStrategy::fixed_indexes:
      for (auto p : cfg.fixed_indexes) pairs.push_back(make_pair_at(walk, p));
      break;
  }
  return pairs;
}

// Flat storage for a training corpus: pair i has target targets[i] and
// context contexts[i*(q-1) .. (i+1)*(q-1)).
struct PairCorpus {
  std::size_t context_size = 0;
  std::vector<NodeId> targets;
  std::vector<NodeId> contexts;

  std::size_t size() const { return targets.size(); }
  std::span<const NodeId> context(std::size_t i) const {
    return {contexts.data() + i * context_size, context_size};
  }
  ContextPair pair(std::size_t i) const {
    auto c = context(i);
    return {targets[i], {c.begin(), c.end()}};
  }
};

// Pairs of every walk in corpus order. Random target choices for walk w of
// node v come from the stream keyed (seed, v, t), independent of the walk RNG.
inline PairCorpus build_pairs(std::span<const Walk> walks, const WalkConfig& cfg) {
  cfg.validate();
  PairCorpus corpus;
  corpus.context_size = cfg.context_size();
  const std::size_t per_walk = cfg.pairs_per_walk();
  corpus.targets.reserve(walks.size() * per_walk);
  corpus.contexts.reserve(walks.size() * per_walk * corpus.context_size);
  for (std::size_t w = 0; w < walks.size(); ++w) {
    const auto& walk = walks[w];
    KeyedRng rng(cfg.seed, RngDomain::target, walk.front(), w % cfg.walks_per_node);
    for (auto& p : extract_pairs(walk, cfg, rng)) {
      corpus.targets.push_back(p.target);
      corpus.contexts.insert(corpus.contexts.end(), p.context.begin(), p.context.end());
    }
  }
  return corpus;
}

struct CorpusHeader {
  std::uint32_t walk_length = 0;
  std::uint32_t walks_per_node = 0;
  std::uint64_t seed = 0;
};

inline void write_corpus(std::ostream& out, std::span<const Walk> walks, const WalkConfig& cfg) {
  out << "q=" << cfg.walk_length << " T=" << cfg.walks_per_node << " seed=" << cfg.seed << '\n';
  for (const auto& walk : walks) {
    for (std::size_t i = 0; i < walk.size(); ++i) out << (i ? " " : "") << walk[i];
    out << '\n';
  }
}

inline std::vector<Walk> read_corpus(std::istream& in, CorpusHeader* header_out = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty corpus file");
  CorpusHeader header;
  {
    const auto tokens = detail::split_ws(detail::trim(line));
    bool ok = tokens.size() == 3;
    if (ok) {
      ok = tokens[0].starts_with("q=") && detail::parse_number(tokens[0].substr(2), header.walk_length) &&
           tokens[1].starts_with("T=") && detail::parse_number(tokens[1].substr(2), header.walks_per_node) &&
           tokens[2].starts_with("seed=") && detail::parse_number(tokens[2].substr(5), header.seed);
    }
    if (!ok) throw ParseError(1, "expected header 'q=<q> T=<T> seed=<s>'");
  }
  std::vector<Walk> walks;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    Walk walk;
    for (auto tok : detail::split_ws(body)) {
      NodeId v = 0;
      if (!detail::parse_number(tok, v)) throw ParseError(lineno, "bad node id in walk");
      walk.push_back(v);
    }
    if (walk.size() != header.walk_length) throw ParseError(lineno, "walk length differs from header q");
    walks.push_back(std::move(walk));
  }
  if (header_out) *header_out = header;
  return walks;
}

}  // namespace caps2ne
