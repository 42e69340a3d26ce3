#ifndef CHEBSPECTRAL_ORTHONORMALIZE_HPP
#define CHEBSPECTRAL_ORTHONORMALIZE_HPP

#include "dense.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace chebspectral {

/// Stream tag for random replacement vectors.
inline constexpr std::uint64_t kReplaceStream = 0x7e91'0000'0000ULL;

struct OrthoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// DGKS: orthonormalize columns [k_sub, k_sub + k_b) of `v` in place against
/// all columns before them, one column at a time. A column whose norm
/// collapses during projection is replaced by a seeded random vector.
/// `draw` counts replacements so repeated calls use fresh vectors.
inline void dgks_in_place(DenseBlock& v, Index k_sub, Index k_b, std::uint64_t seed,
                          std::uint64_t& draw, Index row_offset = 0) {
  constexpr double kReorth = 0.7071067811865476;  // 1/sqrt(2)
  constexpr double kDrop = 1e-12;
  constexpr int kMaxReplace = 8;

  for (Index j = k_sub; j < k_sub + k_b; ++j) {
    auto x = v.col(j);
    int replaced = 0;
    for (;;) {
      const double nrm0 = x.norm();
      double nrm = nrm0;
      if (nrm0 > 0.0 && j > 0) {
        for (int pass = 0; pass < 3; ++pass) {
          const auto basis = v.leftCols(j);
          const Eigen::VectorXd h = basis.transpose() * x;
          x -= basis * h;
          const double nrm_new = x.norm();
          const bool enough = nrm_new > kReorth * nrm;
          nrm = nrm_new;
          if (enough) break;
        }
      }
      if (nrm0 > 0.0 && nrm > kDrop * nrm0) {
        x /= nrm;
        break;
      }
      if (++replaced > kMaxReplace) throw OrthoError("dgks: could not complete the basis");
      x = random_rows(row_offset, v.rows(), 1, seed, kReplaceStream + draw++, 0).col(0);
    }
  }
}

/// Orthonormalize `v_new` against the orthonormal columns of `v_locked`.
inline DenseBlock dgks_orthonormalize(const DenseBlock& v_new, const DenseBlock& v_locked,
                                      std::uint64_t seed = 0) {
  if (v_locked.cols() > 0 && v_locked.rows() != v_new.rows())
    throw std::invalid_argument("dgks_orthonormalize: row mismatch");
  DenseBlock all(v_new.rows(), v_locked.cols() + v_new.cols());
  all << v_locked, v_new;
  std::uint64_t draw = 0;
  dgks_in_place(all, v_locked.cols(), v_new.cols(), seed, draw);
  return all.rightCols(v_new.cols());
}

/// Block orthonormalization of `x` against `locked`: two classical
/// Gram-Schmidt passes, a QR of the block, then one more pass and QR to
/// remove any loss of orthogonality introduced by an ill-conditioned R.
///
/// The reductions and the QR are injected so the same routine serves a
/// single address space (`sum` is a no-op, `qr` a local Householder QR) and
/// a row-distributed block (`sum` an allreduce, `qr` a TSQR).
///
///   sum(M)        sums M elementwise across all row owners, in place
///   qr(X)         ThinQr of the row-distributed X (local Q rows, global R)
///   random(c, d)  local rows of replacement vector number d (column c)
template <class Sum, class Qr, class Random>
void block_cgs_qr(const Eigen::Ref<const DenseBlock>& locked, DenseBlock& x, Sum&& sum,
                  Qr&& qr, Random&& random, std::uint64_t& draw) {
  constexpr double kDrop = 1e-10;
  constexpr int kMaxRetries = 6;
  const Index nb = x.cols();
  if (nb == 0) return;

  auto project = [&](DenseBlock& y) {
    if (locked.cols() == 0) return;
    DenseBlock c = locked.transpose() * y;
    sum(c);
    y.noalias() -= locked * c;
  };

  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    DenseBlock norms = x.colwise().squaredNorm();
    sum(norms);
    project(x);
    project(x);
    ThinQr f = qr(x);
    bool replaced = false;
    for (Index j = 0; j < nb; ++j) {
      const double ref = std::sqrt(norms(0, j));
      if (!(ref > 0.0) || !(f.r(j, j) > kDrop * ref)) {
        x.col(j) = random(j, draw++);
        replaced = true;
      }
    }
    if (replaced) continue;
    x = std::move(f.q);
    project(x);
    x = qr(x).q;
    return;
  }
  throw OrthoError("block orthonormalization: replacement retries exhausted");
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_ORTHONORMALIZE_HPP
