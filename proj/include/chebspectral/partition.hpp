#ifndef CHEBSPECTRAL_PARTITION_HPP
#define CHEBSPECTRAL_PARTITION_HPP

#include "dense.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chebspectral {

/// Cluster assignment of graph nodes; labels lie in [0, n_clusters).
struct Partition {
  std::vector<Index> labels;
  Index n_clusters = 0;

  Partition() = default;
  explicit Partition(std::vector<Index> l) : labels(std::move(l)) {
    Index mx = -1;
    for (Index x : labels) {
      if (x < 0) throw std::invalid_argument("Partition: negative label");
      mx = std::max(mx, x);
    }
    n_clusters = mx + 1;
  }
  Partition(std::vector<Index> l, Index k) : labels(std::move(l)), n_clusters(k) {
    for (Index x : labels)
      if (x < 0 || x >= k) throw std::invalid_argument("Partition: label out of range");
  }

  Index size() const noexcept { return static_cast<Index>(labels.size()); }
  friend bool operator==(const Partition&, const Partition&) = default;
};

/// One label per line.
inline void write_partition(const std::string& path, const Partition& part) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (Index x : part.labels) out << x << '\n';
}

inline Partition read_partition(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Index> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(line, &pos);
      labels.push_back(static_cast<Index>(v));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad label");
    }
  }
  return Partition(std::move(labels));
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_PARTITION_HPP
