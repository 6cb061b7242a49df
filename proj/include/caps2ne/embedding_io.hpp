#pragma once

#include <concepts>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "caps2ne/graph.hpp"
#include "caps2ne/loss.hpp"

namespace caps2ne {

// word2vec-style text: "N k" header, then "id v1 ... vk" with 9 significant
// digits. Row i is written with id ids[i] (or i when ids is empty).
template <std::floating_point Real>
void write_embeddings(std::ostream& out, const EmbeddingTable<Real>& table, std::span<const NodeId> ids = {}) {
  out << table.rows << ' ' << table.dim << '\n';
  char buf[32];
  for (std::size_t i = 0; i < table.rows; ++i) {
    out << (ids.empty() ? static_cast<NodeId>(i) : ids[i]);
    for (Real x : table.row(i)) {
      std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(x));
      out << buf;
    }
    out << '\n';
  }
}

// Reads an embedding file into a table indexed by node id; rows for ids not
// present stay zero. `present`, when given, marks which ids appeared.
inline EmbeddingTable<double> read_embeddings(std::istream& in, std::vector<bool>* present = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty embedding file");
  const auto head = detail::split_ws(detail::trim(line));
  std::size_t n = 0, k = 0;
  if (head.size() != 2 || !detail::parse_number(head[0], n) || !detail::parse_number(head[1], k))
    throw ParseError(1, "expected header 'N k'");
  std::vector<std::pair<NodeId, std::vector<double>>> rows;
  NodeId max_id = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto tokens = detail::split_ws(body);
    NodeId id = 0;
    if (tokens.size() != k + 1 || !detail::parse_number(tokens[0], id))
      throw ParseError(lineno, "expected node id followed by " + std::to_string(k) + " values");
    std::vector<double> values(k);
    for (std::size_t j = 0; j < k; ++j)
      if (!detail::parse_number(tokens[j + 1], values[j])) throw ParseError(lineno, "bad embedding value");
    max_id = std::max(max_id, id);
    rows.emplace_back(id, std::move(values));
  }
  if (rows.size() != n) throw ParseError(lineno, "header announces " + std::to_string(n) + " rows, found " +
                                                    std::to_string(rows.size()));
  EmbeddingTable<double> table(rows.empty() ? 0 : max_id + std::size_t{1}, k);
  if (present) present->assign(table.rows, false);
  for (auto& [id, values] : rows) {
    std::copy(values.begin(), values.end(), table.row(id).begin());
    if (present) (*present)[id] = true;
  }
  return table;
}

}  // namespace caps2ne
