#ifndef CHEBSPECTRAL_DENSE_HPP
#define CHEBSPECTRAL_DENSE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace chebspectral {

using Index = std::ptrdiff_t;

/// Tall-skinny dense block (column-major). Houses V, W, U and their slices.
using DenseBlock = Eigen::MatrixXd;

/// Counter-based random numbers: the value depends only on (seed, stream,
/// row, col), never on call order. This keeps random fills identical between
/// the sequential solver and any rank decomposition of the distributed one.
namespace rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash(std::uint64_t seed, std::uint64_t stream,
                             std::uint64_t a, std::uint64_t b) noexcept {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ a);
  return splitmix64(h ^ b);
}

/// Uniform in [0, 1).
constexpr double uniform01(std::uint64_t seed, std::uint64_t stream,
                           std::uint64_t a, std::uint64_t b) noexcept {
  return static_cast<double>(hash(seed, stream, a, b) >> 11) * 0x1.0p-53;
}

/// Uniform in [-1, 1).
constexpr double uniform_pm1(std::uint64_t seed, std::uint64_t stream,
                             std::uint64_t a, std::uint64_t b) noexcept {
  return 2.0 * uniform01(seed, stream, a, b) - 1.0;
}

}  // namespace rng

/// Fill rows [row_begin, row_begin + rows) of a conceptual global random
/// matrix. Column `c` of the result is global column `col_offset + c`.
inline DenseBlock random_rows(Index row_begin, Index rows, Index cols,
                              std::uint64_t seed, std::uint64_t stream,
                              Index col_offset = 0) {
  DenseBlock out(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r)
      out(r, c) = rng::uniform_pm1(seed, stream,
                                   static_cast<std::uint64_t>(row_begin + r),
                                   static_cast<std::uint64_t>(col_offset + c));
  return out;
}

/// Thin Householder QR with a non-negative diagonal on R.
///
/// Computes X = Q R for X of shape (m x n), m >= n, with Q (m x n) having
/// orthonormal columns and R (n x n) upper triangular. Rows are processed in
/// a fixed order so the result is bit-reproducible.
struct ThinQr {
  DenseBlock q;
  DenseBlock r;
};

inline ThinQr householder_qr(const DenseBlock& x) {
  const Index m = x.rows();
  const Index n = x.cols();
  if (m < n) throw std::invalid_argument("householder_qr: rows < cols");

  DenseBlock a = x;
  DenseBlock vs = DenseBlock::Zero(m, n);  // reflector vectors
  Eigen::VectorXd betas = Eigen::VectorXd::Zero(n);

  for (Index k = 0; k < n; ++k) {
    double norm2 = 0.0;
    for (Index i = k; i < m; ++i) norm2 += a(i, k) * a(i, k);
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) continue;
    const double alpha = a(k, k) >= 0.0 ? -norm : norm;
    // v = a(k:m, k) - alpha e_1
    double vnorm2 = 0.0;
    for (Index i = k; i < m; ++i) {
      vs(i, k) = a(i, k);
      if (i == k) vs(i, k) -= alpha;
      vnorm2 += vs(i, k) * vs(i, k);
    }
    if (vnorm2 == 0.0) continue;
    const double beta = 2.0 / vnorm2;
    betas(k) = beta;
    for (Index j = k; j < n; ++j) {
      double dot = 0.0;
      for (Index i = k; i < m; ++i) dot += vs(i, k) * a(i, j);
      const double s = beta * dot;
      for (Index i = k; i < m; ++i) a(i, j) -= s * vs(i, k);
    }
  }

  ThinQr out;
  out.r = a.topRows(n).triangularView<Eigen::Upper>();
  // Accumulate Q = H_0 H_1 ... H_{n-1} applied to the first n unit columns.
  out.q = DenseBlock::Zero(m, n);
  for (Index j = 0; j < n; ++j) out.q(j, j) = 1.0;
  for (Index k = n - 1; k >= 0; --k) {
    if (betas(k) == 0.0) continue;
    for (Index j = 0; j < n; ++j) {
      double dot = 0.0;
      for (Index i = k; i < m; ++i) dot += vs(i, k) * out.q(i, j);
      const double s = betas(k) * dot;
      for (Index i = k; i < m; ++i) out.q(i, j) -= s * vs(i, k);
    }
  }
  // Sign convention: non-negative diagonal of R.
  for (Index k = 0; k < n; ++k) {
    if (out.r(k, k) < 0.0) {
      out.r.row(k) *= -1.0;
      out.q.col(k) *= -1.0;
    }
  }
  return out;
}

/// Smallest-first symmetric eigendecomposition of a small dense matrix.
struct SymEig {
  Eigen::VectorXd values;
  DenseBlock vectors;
};

inline SymEig sym_eig(const DenseBlock& h) {
  Eigen::SelfAdjointEigenSolver<DenseBlock> es(h);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("sym_eig: eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_DENSE_HPP
