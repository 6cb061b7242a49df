#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "caps2ne/rng.hpp"

namespace caps2ne {

using NodeId = std::uint32_t;
using ClassId = std::uint32_t;

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <class T>
bool parse_number(std::string_view token, T& out) {
  if (token.empty() || token.front() == '+') return false;
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

}  // namespace detail

// Undirected simple graph over dense ids [0, num_nodes). Each edge appears in
// both adjacency lists; lists are sorted and free of duplicates/self-loops.
class Graph {
 public:
  Graph() = default;
  explicit Graph(std::size_t num_nodes) : adjacency_(num_nodes) {}

  // Builds from an arbitrary (possibly one-directional, duplicated) edge list.
  static Graph from_edges(std::size_t num_nodes, std::span<const std::pair<NodeId, NodeId>> edges) {
    Graph g(num_nodes);
    for (auto [u, v] : edges) {
      if (u >= num_nodes || v >= num_nodes) throw std::out_of_range("edge endpoint out of range");
      if (u == v) throw std::invalid_argument("self-loop on node " + std::to_string(u));
      g.adjacency_[u].push_back(v);
      g.adjacency_[v].push_back(u);
    }
    g.normalize();
    return g;
  }

  std::size_t num_nodes() const { return adjacency_.size(); }

  std::size_t num_edges() const {
    std::size_t twice = 0;
    for (const auto& a : adjacency_) twice += a.size();
    return twice / 2;
  }

  std::span<const NodeId> neighbors(NodeId v) const { return adjacency_.at(v); }
  std::size_t degree(NodeId v) const { return adjacency_.at(v).size(); }

  bool has_edge(NodeId u, NodeId v) const {
    const auto& a = adjacency_.at(u);
    return std::binary_search(a.begin(), a.end(), v);
  }

  bool operator==(const Graph&) const = default;

 private:
  void normalize() {
    for (auto& a : adjacency_) {
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
    }
  }

  std::vector<std::vector<NodeId>> adjacency_;
};

// Edge-list text: "u v" per line, "#nodes N" header optional, other '#'
// lines are comments.
inline Graph load_edge_list(std::istream& in) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  std::size_t declared = 0;
  bool has_header = false;
  std::size_t max_id_plus_one = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    if (body.front() == '#') {
      const auto tokens = detail::split_ws(body.substr(1));
      if (tokens.size() == 2 && tokens[0] == "nodes") {
        if (!detail::parse_number(tokens[1], declared)) throw ParseError(lineno, "bad #nodes header");
        has_header = true;
      }
      continue;
    }
    const auto tokens = detail::split_ws(body);
    NodeId u = 0, v = 0;
    if (tokens.size() != 2 || !detail::parse_number(tokens[0], u) || !detail::parse_number(tokens[1], v))
      throw ParseError(lineno, "expected two non-negative integer node ids, got '" + std::string(body) + "'");
    if (u == v) throw ParseError(lineno, "self-loop on node " + std::to_string(u));
    edges.emplace_back(u, v);
    max_id_plus_one = std::max<std::size_t>(max_id_plus_one, std::max(u, v) + std::size_t{1});
  }
  if (has_header && declared < max_id_plus_one)
    throw ParseError(lineno, "#nodes " + std::to_string(declared) + " is smaller than max id + 1 = " +
                                 std::to_string(max_id_plus_one));
  const std::size_t n = has_header ? declared : max_id_plus_one;
  return Graph::from_edges(n, edges);
}

inline void write_edge_list(std::ostream& out, const Graph& g) {
  out << "#nodes " << g.num_nodes() << '\n';
  for (NodeId u = 0; u < g.num_nodes(); ++u)
    for (NodeId v : g.neighbors(u))
      if (u < v) out << u << ' ' << v << '\n';
}

enum class FeatureSource { given_fixed, learned };

// Dense per-node feature rows. Given (bag-of-words) tables also keep the
// nonzero column list of each row so the first capsule layer can skip zeros.
template <class Real = double>
class BasicFeatureTable {
 public:
  BasicFeatureTable() = default;
  BasicFeatureTable(std::size_t num_nodes, std::size_t dim, FeatureSource source)
      : num_nodes_(num_nodes), dim_(dim), source_(source), values_(num_nodes * dim, Real(0)) {}

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t dim() const { return dim_; }
  FeatureSource source() const { return source_; }
  bool learned() const { return source_ == FeatureSource::learned; }
  bool sparse() const { return !support_.empty(); }

  std::span<const Real> row(NodeId v) const { return {values_.data() + std::size_t{v} * dim_, dim_}; }
  std::span<Real> mutable_row(NodeId v) {
    if (source_ == FeatureSource::given_fixed) throw std::logic_error("given feature rows are immutable");
    return {values_.data() + std::size_t{v} * dim_, dim_};
  }
  // Nonzero columns of row v; empty span when the table is dense.
  std::span<const std::uint32_t> support(NodeId v) const {
    if (support_.empty()) return {};
    return support_[v];
  }

  std::span<const Real> values() const { return values_; }
  std::span<Real> mutable_values() {
    if (source_ == FeatureSource::given_fixed) throw std::logic_error("given feature rows are immutable");
    return values_;
  }

  // Finalizes a given table: records per-row support. Used by loaders.
  void freeze_support() {
    support_.assign(num_nodes_, {});
    for (std::size_t v = 0; v < num_nodes_; ++v)
      for (std::size_t j = 0; j < dim_; ++j)
        if (values_[v * dim_ + j] != Real(0)) support_[v].push_back(static_cast<std::uint32_t>(j));
  }

  template <class Other>
  BasicFeatureTable<Other> cast() const {
    BasicFeatureTable<Other> out(num_nodes_, dim_, FeatureSource::learned);
    auto dst = out.mutable_values();
    for (std::size_t i = 0; i < values_.size(); ++i) dst[i] = static_cast<Other>(values_[i]);
    out.set_source(source_);
    if (sparse()) out.freeze_support();
    return out;
  }

  void set_source(FeatureSource s) { source_ = s; }
  Real& raw(NodeId v, std::size_t j) { return values_[std::size_t{v} * dim_ + j]; }

  bool operator==(const BasicFeatureTable&) const = default;

 private:
  std::size_t num_nodes_ = 0;
  std::size_t dim_ = 0;
  FeatureSource source_ = FeatureSource::given_fixed;
  std::vector<Real> values_;
  std::vector<std::vector<std::uint32_t>> support_;
};

using FeatureTable = BasicFeatureTable<double>;

// Sparse triplets "node feature_index value"; everything else is zero.
inline FeatureTable load_features(std::istream& in, std::size_t dim, std::size_t num_nodes) {
  FeatureTable table(num_nodes, dim, FeatureSource::learned);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto tokens = detail::split_ws(body);
    NodeId v = 0;
    std::size_t j = 0;
    double value = 0;
    if (tokens.size() != 3 || !detail::parse_number(tokens[0], v) || !detail::parse_number(tokens[1], j) ||
        !detail::parse_number(tokens[2], value))
      throw ParseError(lineno, "expected 'node feature_index value'");
    if (v >= num_nodes) throw ParseError(lineno, "node id " + std::to_string(v) + " out of range");
    if (j >= dim) throw ParseError(lineno, "feature index " + std::to_string(j) + " >= d = " + std::to_string(dim));
    if (!std::isfinite(value)) throw ParseError(lineno, "non-finite feature value");
    table.raw(v, j) = value;
  }
  table.set_source(FeatureSource::given_fixed);
  table.freeze_support();
  return table;
}

// Learned features, i.i.d. uniform on [-sqrt(6/d), sqrt(6/d)].
template <class Real = double>
BasicFeatureTable<Real> init_learned_features(std::size_t num_nodes, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("feature dimension must be positive");
  BasicFeatureTable<Real> table(num_nodes, dim, FeatureSource::learned);
  const double bound = std::sqrt(6.0 / static_cast<double>(dim));
  auto values = table.mutable_values();
  for (std::size_t v = 0; v < num_nodes; ++v) {
    KeyedRng rng(seed, RngDomain::features, v);
    for (std::size_t j = 0; j < dim; ++j) values[v * dim + j] = static_cast<Real>(rng.uniform(-bound, bound));
  }
  return table;
}

// Per-node label sets. An empty set marks an unlabeled node.
class LabelTable {
 public:
  LabelTable() = default;
  LabelTable(std::size_t num_nodes, std::size_t num_classes) : num_classes_(num_classes), labels_(num_nodes) {}

  std::size_t num_nodes() const { return labels_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  std::span<const ClassId> labels(NodeId v) const { return labels_.at(v); }
  bool labeled(NodeId v) const { return v < labels_.size() && !labels_[v].empty(); }

  void set(NodeId v, std::vector<ClassId> classes) {
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    for (ClassId c : classes)
      if (c >= num_classes_) throw std::out_of_range("label " + std::to_string(c) + " out of range");
    if (v >= labels_.size()) labels_.resize(v + std::size_t{1});
    labels_[v] = std::move(classes);
  }

  void resize_nodes(std::size_t n) {
    if (n < labels_.size()) throw std::invalid_argument("cannot shrink label table");
    labels_.resize(n);
  }

  std::vector<NodeId> labeled_nodes() const {
    std::vector<NodeId> out;
    for (NodeId v = 0; v < labels_.size(); ++v)
      if (!labels_[v].empty()) out.push_back(v);
    return out;
  }

  bool multi_label() const {
    return std::any_of(labels_.begin(), labels_.end(), [](const auto& l) { return l.size() > 1; });
  }

 private:
  std::size_t num_classes_ = 0;
  std::vector<std::vector<ClassId>> labels_;
};

// "node l1,l2,..." lines; num_classes = 1 + max label id.
inline LabelTable load_labels(std::istream& in, std::size_t num_nodes = 0) {
  std::vector<std::pair<NodeId, std::vector<ClassId>>> rows;
  std::unordered_map<NodeId, std::size_t> seen;
  ClassId max_label = 0;
  bool any = false;
  std::size_t max_node_plus_one = num_nodes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto tokens = detail::split_ws(body);
    NodeId v = 0;
    if (tokens.size() != 2 || !detail::parse_number(tokens[0], v))
      throw ParseError(lineno, "expected 'node label[,label...]'");
    if (!seen.emplace(v, lineno).second) throw ParseError(lineno, "duplicate line for node " + std::to_string(v));
    std::vector<ClassId> classes;
    std::string_view rest = tokens[1];
    while (true) {
      const auto comma = rest.find(',');
      ClassId c = 0;
      if (!detail::parse_number(rest.substr(0, comma), c)) throw ParseError(lineno, "bad label list");
      classes.push_back(c);
      max_label = std::max(max_label, c);
      any = true;
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    max_node_plus_one = std::max<std::size_t>(max_node_plus_one, v + std::size_t{1});
    rows.emplace_back(v, std::move(classes));
  }
  LabelTable table(max_node_plus_one, any ? max_label + std::size_t{1} : 0);
  for (auto& [v, classes] : rows) table.set(v, std::move(classes));
  return table;
}

// Optional "name<TAB>id" mapping for datasets whose raw ids are strings.
inline std::unordered_map<std::string, NodeId> load_name_map(std::istream& in) {
  std::unordered_map<std::string, NodeId> names;
  std::vector<bool> used;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto tab = line.rfind('\t');
    NodeId id = 0;
    if (tab == std::string::npos || !detail::parse_number(detail::trim(std::string_view(line).substr(tab + 1)), id))
      throw ParseError(lineno, "expected 'name<TAB>id'");
    std::string name = line.substr(0, tab);
    if (id >= used.size()) used.resize(id + std::size_t{1}, false);
    if (used[id]) throw ParseError(lineno, "id " + std::to_string(id) + " mapped twice");
    used[id] = true;
    if (!names.emplace(std::move(name), id).second) throw ParseError(lineno, "duplicate name");
  }
  return names;
}

// Induced subgraph on the nodes where keep[v] is true, relabeled densely in
// increasing id order. Returns the subgraph and old ids of the new nodes.
inline std::pair<Graph, std::vector<NodeId>> induced_subgraph(const Graph& g, const std::vector<bool>& keep) {
  std::vector<NodeId> old_ids;
  std::vector<NodeId> new_id(g.num_nodes(), std::numeric_limits<NodeId>::max());
  for (NodeId v = 0; v < g.num_nodes(); ++v)
    if (keep.at(v)) {
      new_id[v] = static_cast<NodeId>(old_ids.size());
      old_ids.push_back(v);
    }
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < g.num_nodes(); ++u) {
    if (!keep[u]) continue;
    for (NodeId v : g.neighbors(u))
      if (u < v && keep[v]) edges.emplace_back(new_id[u], new_id[v]);
  }
  return {Graph::from_edges(old_ids.size(), edges), std::move(old_ids)};
}

}  // namespace caps2ne
