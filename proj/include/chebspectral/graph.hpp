#ifndef CHEBSPECTRAL_GRAPH_HPP
#define CHEBSPECTRAL_GRAPH_HPP

#include "csr.hpp"
#include "partition.hpp"
#include "split.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace chebspectral {

/// Undirected, unweighted graph. Edges are canonical (u < v), sorted, unique.
struct EdgeList {
  Index n_nodes = 0;
  std::vector<std::pair<Index, Index>> edges;

  friend bool operator==(const EdgeList&, const EdgeList&) = default;
};

class GraphParseError : public std::runtime_error {
 public:
  GraphParseError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

enum class GraphFormat { tsv, matrix_market };

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline bool parse_index(std::istringstream& in, long long& out) {
  in >> out;
  return !in.fail();
}

}  // namespace detail

/// Canonicalize raw pairs into an EdgeList. Self-loops and out-of-range
/// indices are rejected; duplicates (in either orientation) collapse.
inline EdgeList make_edge_list(Index n_nodes, std::vector<std::pair<Index, Index>> raw) {
  for (auto& [u, v] : raw) {
    if (u < 0 || v < 0 || u >= n_nodes || v >= n_nodes)
      throw std::out_of_range("edge (" + std::to_string(u) + "," + std::to_string(v) +
                              ") out of range for " + std::to_string(n_nodes) + " nodes");
    if (u == v) throw std::invalid_argument("self-loop at node " + std::to_string(u));
    if (u > v) std::swap(u, v);
  }
  std::sort(raw.begin(), raw.end());
  raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
  return EdgeList{n_nodes, std::move(raw)};
}

/// Tab/space separated edges, `#` comments, optional `%N <count>` header.
inline EdgeList read_edge_list_tsv(std::istream& in, const std::string& name = "<tsv>") {
  std::vector<std::pair<Index, Index>> raw;
  Index declared = -1;
  Index max_index = -1;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    if (line[first] == '%') {
      std::istringstream hs(line.substr(first + 1));
      std::string key;
      hs >> key;
      if (key == "N") {
        long long n = 0;
        if (!detail::parse_index(hs, n) || n < 0)
          throw GraphParseError(name, lineno, "bad %N header");
        declared = static_cast<Index>(n);
      }
      continue;
    }
    std::istringstream ls(line);
    long long u = 0, v = 0;
    if (!detail::parse_index(ls, u) || !detail::parse_index(ls, v))
      throw GraphParseError(name, lineno, "expected two node indices");
    std::string rest;
    if (ls >> rest && rest[0] != '#')
      throw GraphParseError(name, lineno, "trailing content '" + rest + "'");
    if (u < 0 || v < 0) throw GraphParseError(name, lineno, "negative node index");
    if (u == v) throw GraphParseError(name, lineno, "self-loop");
    if (declared >= 0 && (u >= declared || v >= declared))
      throw GraphParseError(name, lineno, "node index out of range");
    raw.emplace_back(static_cast<Index>(u), static_cast<Index>(v));
    max_index = std::max<Index>(max_index, static_cast<Index>(std::max(u, v)));
  }
  const Index n = declared >= 0 ? declared : max_index + 1;
  return make_edge_list(n, std::move(raw));
}

/// Matrix Market `coordinate pattern|real symmetric`, 1-based indices.
/// Explicit zero values in real files are not edges.
inline EdgeList read_matrix_market(std::istream& in, const std::string& name = "<mm>") {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw GraphParseError(name, 1, "empty file");
  ++lineno;
  std::istringstream hs(detail::lower(line));
  std::string banner, object, layout, field, symmetry;
  hs >> banner >> object >> layout >> field >> symmetry;
  if (banner != "%%matrixmarket" || object != "matrix" || layout != "coordinate")
    throw GraphParseError(name, lineno, "expected '%%MatrixMarket matrix coordinate'");
  if (field != "pattern" && field != "real" && field != "integer")
    throw GraphParseError(name, lineno, "unsupported field '" + field + "'");
  if (symmetry != "symmetric")
    throw GraphParseError(name, lineno, "only symmetric matrices are accepted");
  const bool has_value = field != "pattern";

  long long rows = -1, cols = -1, entries = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '%') continue;
    std::istringstream ss(line);
    if (!(ss >> rows >> cols >> entries) || rows < 0 || cols < 0 || entries < 0)
      throw GraphParseError(name, lineno, "bad size line");
    break;
  }
  if (rows < 0) throw GraphParseError(name, lineno, "missing size line");
  if (rows != cols) throw GraphParseError(name, lineno, "matrix is not square");

  std::vector<std::pair<Index, Index>> raw;
  long long seen = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '%') continue;
    std::istringstream ss(line);
    long long i = 0, j = 0;
    if (!(ss >> i >> j)) throw GraphParseError(name, lineno, "expected two indices");
    double value = 1.0;
    if (has_value && !(ss >> value)) throw GraphParseError(name, lineno, "missing value");
    ++seen;
    if (i < 1 || j < 1 || i > rows || j > rows)
      throw GraphParseError(name, lineno, "index out of range");
    if (i == j) throw GraphParseError(name, lineno, "self-loop");
    if (value != 0.0) raw.emplace_back(static_cast<Index>(i - 1), static_cast<Index>(j - 1));
  }
  if (seen != entries)
    throw GraphParseError(name, lineno, "expected " + std::to_string(entries) +
                                            " entries, found " + std::to_string(seen));
  return make_edge_list(static_cast<Index>(rows), std::move(raw));
}

inline EdgeList load_edge_list(const std::string& path, GraphFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return format == GraphFormat::tsv ? read_edge_list_tsv(in, path)
                                    : read_matrix_market(in, path);
}

inline void write_edge_list_tsv(std::ostream& out, const EdgeList& g) {
  out << "%N " << g.n_nodes << '\n';
  for (const auto& [u, v] : g.edges) out << u << '\t' << v << '\n';
}

inline std::vector<Index> degrees(const EdgeList& g) {
  std::vector<Index> d(static_cast<std::size_t>(g.n_nodes), 0);
  for (const auto& [u, v] : g.edges) {
    ++d[static_cast<std::size_t>(u)];
    ++d[static_cast<std::size_t>(v)];
  }
  return d;
}

/// A = I - D^{-1/2} S D^{-1/2} with 0/1 similarity S. Isolated nodes get an
/// identity row so A stays symmetric with spectrum in [0, 2].
inline CsrMatrix normalized_laplacian(const EdgeList& g) {
  const auto deg = degrees(g);
  std::vector<CsrMatrix::Triplet> t;
  t.reserve(2 * g.edges.size() + static_cast<std::size_t>(g.n_nodes));
  for (Index i = 0; i < g.n_nodes; ++i) t.push_back({i, i, 1.0});
  for (const auto& [u, v] : g.edges) {
    const double du = static_cast<double>(deg[static_cast<std::size_t>(u)]);
    const double dv = static_cast<double>(deg[static_cast<std::size_t>(v)]);
    const double w = -1.0 / std::sqrt(du * dv);
    t.push_back({u, v, w});
    t.push_back({v, u, w});
  }
  return CsrMatrix::from_triplets(g.n_nodes, g.n_nodes, std::move(t), true);
}

/// Number of connected components (union-find).
inline Index connected_components(const EdgeList& g) {
  std::vector<Index> parent(static_cast<std::size_t>(g.n_nodes));
  for (Index i = 0; i < g.n_nodes; ++i) parent[static_cast<std::size_t>(i)] = i;
  auto find = [&](Index x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      auto& px = parent[static_cast<std::size_t>(x)];
      px = parent[static_cast<std::size_t>(px)];
      x = px;
    }
    return x;
  };
  Index comps = g.n_nodes;
  for (const auto& [u, v] : g.edges) {
    const Index a = find(u), b = find(v);
    if (a != b) {
      parent[static_cast<std::size_t>(a)] = b;
      --comps;
    }
  }
  return comps;
}

struct SbmGraph {
  EdgeList graph;
  Partition truth;
};

/// Stochastic block model. Block sizes differ by at most one (leading blocks
/// take the remainder); each unordered pair is sampled once from a
/// counter-based stream so the output depends only on the arguments.
inline SbmGraph gen_sbm(Index n_nodes, Index n_blocks, double p_in, double p_out,
                        std::uint64_t seed) {
  if (n_nodes < 1 || n_blocks < 1 || n_blocks > n_nodes)
    throw std::invalid_argument("gen_sbm: need 1 <= n_blocks <= n_nodes");
  if (!(p_in >= 0.0 && p_in <= 1.0 && p_out >= 0.0 && p_out <= 1.0))
    throw std::invalid_argument("gen_sbm: probabilities must lie in [0, 1]");
  if (!(p_in > p_out)) throw std::invalid_argument("gen_sbm: need p_in > p_out");

  const EvenSplit split{n_nodes, n_blocks};
  std::vector<Index> labels(static_cast<std::size_t>(n_nodes));
  for (Index b = 0; b < n_blocks; ++b)
    for (Index u = split.begin(b); u < split.end(b); ++u)
      labels[static_cast<std::size_t>(u)] = b;

  constexpr std::uint64_t kStream = 0x5b3f;
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < n_nodes; ++u)
    for (Index v = u + 1; v < n_nodes; ++v) {
      const double p = labels[static_cast<std::size_t>(u)] ==
                               labels[static_cast<std::size_t>(v)]
                           ? p_in
                           : p_out;
      if (rng::uniform01(seed, kStream, static_cast<std::uint64_t>(u),
                         static_cast<std::uint64_t>(v)) < p)
        edges.emplace_back(u, v);
    }
  return {EdgeList{n_nodes, std::move(edges)}, Partition(std::move(labels), n_blocks)};
}

/// p * max_{i,j} nnz(A[i,j]) / nnz(A) for the q x q block partition used by
/// the distributed SpMM.
inline double load_imbalance(const CsrMatrix& a, Index grid_q) {
  if (a.nnz() == 0) throw std::invalid_argument("load_imbalance: empty matrix");
  if (grid_q < 1) throw std::invalid_argument("load_imbalance: grid_q must be >= 1");
  const GridSplit split{a.rows(), grid_q};
  Index max_nnz = 0;
  for (Index i = 0; i < grid_q; ++i)
    for (Index j = 0; j < grid_q; ++j)
      max_nnz = std::max(max_nnz, a.count_in(split.coarse_begin(i), split.coarse_end(i),
                                             split.coarse_begin(j), split.coarse_end(j)));
  const double p = static_cast<double>(grid_q * grid_q);
  return p * static_cast<double>(max_nnz) / static_cast<double>(a.nnz());
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_GRAPH_HPP
