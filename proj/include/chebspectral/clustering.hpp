#ifndef CHEBSPECTRAL_CLUSTERING_HPP
#define CHEBSPECTRAL_CLUSTERING_HPP

// Spectral embedding to clusters: row normalization, seeded k-means++ with
// restarts, and partition agreement scores (ARI, NMI).

#include "dense.hpp"
#include "partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

namespace chebspectral {

/// Rows scaled to unit norm; all-zero rows stay zero and are flagged.
struct FeatureMatrix {
  DenseBlock rows;
  std::vector<bool> zero_row;

  Index n_zero_rows() const {
    Index c = 0;
    for (bool z : zero_row) c += z;
    return c;
  }
};

inline FeatureMatrix row_normalize(const DenseBlock& v) {
  FeatureMatrix f{v, std::vector<bool>(static_cast<std::size_t>(v.rows()), false)};
  for (Index i = 0; i < v.rows(); ++i) {
    const double nrm = v.row(i).norm();
    if (nrm == 0.0) {
      f.zero_row[static_cast<std::size_t>(i)] = true;
      continue;
    }
    f.rows.row(i) /= nrm;
  }
  return f;
}

struct KMeansOptions {
  std::uint64_t seed = 0;
  int max_iter = 300;
  int n_restarts = 10;
};

struct KMeansResult {
  Partition partition;
  DenseBlock centers;
  double inertia = 0.0;
  int iterations = 0;               // of the winning restart
  std::vector<double> history;      // inertia after each assignment, winning restart
};

namespace kmeans_detail {

inline constexpr std::uint64_t kStream = 0x6b6d'0000'0000ULL;

inline double sq_dist(const DenseBlock& x, Index i, const DenseBlock& c, Index j) {
  return (x.row(i) - c.row(j)).squaredNorm();
}

// k-means++ seeding with counter-based draws.
inline DenseBlock seed_centers(const DenseBlock& x, Index k, std::uint64_t seed, int restart) {
  const Index n = x.rows();
  const auto stream = kStream + static_cast<std::uint64_t>(restart);
  DenseBlock c(k, x.cols());
  auto draw = [&](Index step) { return rng::uniform01(seed, stream, static_cast<std::uint64_t>(step), 0); };
  Index first = std::min<Index>(static_cast<Index>(draw(0) * static_cast<double>(n)), n - 1);
  c.row(0) = x.row(first);
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(x, i, c, 0);
  for (Index j = 1; j < k; ++j) {
    double total = 0.0;
    for (double d : d2) total += d;
    Index pick = n - 1;
    if (total > 0.0) {
      const double target = draw(j) * total;
      double acc = 0.0;
      for (Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min<Index>(static_cast<Index>(draw(j) * static_cast<double>(n)), n - 1);
    }
    c.row(j) = x.row(pick);
    for (Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], sq_dist(x, i, c, j));
  }
  return c;
}

// Nearest center, lowest index on ties. Returns the inertia.
inline double assign(const DenseBlock& x, const DenseBlock& c, std::vector<Index>& labels) {
  double inertia = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    Index best = 0;
    double bd = sq_dist(x, i, c, 0);
    for (Index j = 1; j < c.rows(); ++j) {
      const double d = sq_dist(x, i, c, j);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    inertia += bd;
  }
  return inertia;
}

}  // namespace kmeans_detail

/// Lloyd's k-means with k-means++ seeding; the restart with the lowest
/// inertia wins (earliest on ties). Deterministic for a fixed seed.
inline KMeansResult kmeans_detailed(const DenseBlock& x, Index k, KMeansOptions opt = {}) {
  const Index n = x.rows();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (k > n) throw std::invalid_argument("kmeans: k exceeds the number of points");
  if (opt.max_iter < 1 || opt.n_restarts < 1)
    throw std::invalid_argument("kmeans: max_iter and n_restarts must be >= 1");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int rs = 0; rs < opt.n_restarts; ++rs) {
    DenseBlock c = kmeans_detail::seed_centers(x, k, opt.seed, rs);
    std::vector<Index> labels(static_cast<std::size_t>(n), -1), prev;
    std::vector<double> hist;
    double inertia = 0.0;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
      prev = labels;
      inertia = kmeans_detail::assign(x, c, labels);
      hist.push_back(inertia);
      if (labels == prev) break;
      // Update centers; an empty cluster takes the point farthest from its center.
      DenseBlock sum = DenseBlock::Zero(k, x.cols());
      std::vector<Index> count(static_cast<std::size_t>(k), 0);
      for (Index i = 0; i < n; ++i) {
        sum.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
        ++count[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
      }
      for (Index j = 0; j < k; ++j) {
        if (count[static_cast<std::size_t>(j)] > 0) {
          c.row(j) = sum.row(j) / static_cast<double>(count[static_cast<std::size_t>(j)]);
          continue;
        }
        Index far = 0;
        double fd = -1.0;
        for (Index i = 0; i < n; ++i) {
          const double d = kmeans_detail::sq_dist(x, i, c, labels[static_cast<std::size_t>(i)]);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        c.row(j) = x.row(far);
        --count[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
        labels[static_cast<std::size_t>(far)] = j;
        count[static_cast<std::size_t>(j)] = 1;
      }
    }
    if (inertia < best.inertia) {
      best.partition = Partition(labels, k);
      best.centers = c;
      best.inertia = inertia;
      best.iterations = std::min(it + 1, opt.max_iter);
      best.history = std::move(hist);
    }
  }
  return best;
}

inline Partition kmeans(const DenseBlock& x, Index k, KMeansOptions opt = {}) {
  return kmeans_detailed(x, k, opt).partition;
}

inline Partition kmeans(const FeatureMatrix& f, Index k, KMeansOptions opt = {}) {
  return kmeans(f.rows, k, opt);
}

// ---------------------------------------------------------------------------
// Agreement scores

namespace score_detail {

struct Contingency {
  std::map<std::pair<Index, Index>, double> cells;
  std::map<Index, double> rows, cols;
  double n = 0.0;
};

inline Contingency contingency(const Partition& a, const Partition& b) {
  if (a.size() != b.size()) throw std::invalid_argument("partition sizes differ");
  Contingency t;
  for (Index i = 0; i < a.size(); ++i) {
    const Index x = a.labels[static_cast<std::size_t>(i)];
    const Index y = b.labels[static_cast<std::size_t>(i)];
    t.cells[{x, y}] += 1.0;
    t.rows[x] += 1.0;
    t.cols[y] += 1.0;
  }
  t.n = static_cast<double>(a.size());
  return t;
}

inline double comb2(double x) { return 0.5 * x * (x - 1.0); }

inline double entropy(const std::map<Index, double>& counts, double n) {
  double h = 0.0;
  for (const auto& [_, c] : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

}  // namespace score_detail

/// Adjusted Rand index. When the chance-corrected denominator vanishes (both
/// partitions trivial in the same way) the result is 1.
inline double ari(const Partition& a, const Partition& b) {
  const auto t = score_detail::contingency(a, b);
  if (t.n < 2.0) return 1.0;
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [_, c] : t.cells) sum_ij += score_detail::comb2(c);
  for (const auto& [_, c] : t.rows) sum_a += score_detail::comb2(c);
  for (const auto& [_, c] : t.cols) sum_b += score_detail::comb2(c);
  const double expected = sum_a * sum_b / score_detail::comb2(t.n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_ij - expected) / (max_index - expected);
}

/// Normalized mutual information with the arithmetic mean of the two
/// entropies as normalizer. Two single-cluster partitions score 1.
inline double nmi(const Partition& a, const Partition& b) {
  const auto t = score_detail::contingency(a, b);
  if (t.n == 0.0) return 1.0;
  const double ha = score_detail::entropy(t.rows, t.n);
  const double hb = score_detail::entropy(t.cols, t.n);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  // Same partition up to relabeling: exactly 1, free of log rounding.
  if (t.cells.size() == t.rows.size() && t.cells.size() == t.cols.size()) return 1.0;
  double mi = 0.0;
  for (const auto& [key, c] : t.cells) {
    const double pxy = c / t.n;
    mi += pxy * std::log(pxy / ((t.rows.at(key.first) / t.n) * (t.cols.at(key.second) / t.n)));
  }
  return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

/// Row-normalize the eigenvectors and cluster them into k groups.
inline Partition spectral_partition(const DenseBlock& eigenvectors, Index k,
                                    KMeansOptions opt = {}) {
  return kmeans(row_normalize(eigenvectors), k, opt);
}

struct ClusterScores {
  double ari_mean = 0.0;
  double nmi_mean = 0.0;
  std::vector<double> ari;
  std::vector<double> nmi;
};

/// Repeats k-means `repeats` times with seeds seed, seed + 1, ... on the same
/// embedding and averages the agreement with `truth`.
inline ClusterScores evaluate_repeats(const DenseBlock& eigenvectors, const Partition& truth,
                                      Index k, int repeats, KMeansOptions opt = {}) {
  if (repeats < 1) throw std::invalid_argument("evaluate_repeats: repeats must be >= 1");
  const FeatureMatrix f = row_normalize(eigenvectors);
  ClusterScores s;
  for (int r = 0; r < repeats; ++r) {
    KMeansOptions o = opt;
    o.seed = opt.seed + static_cast<std::uint64_t>(r);
    const Partition p = kmeans(f, k, o);
    s.ari.push_back(ari(p, truth));
    s.nmi.push_back(nmi(p, truth));
  }
  for (double x : s.ari) s.ari_mean += x;
  for (double x : s.nmi) s.nmi_mean += x;
  s.ari_mean /= repeats;
  s.nmi_mean /= repeats;
  return s;
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_CLUSTERING_HPP
