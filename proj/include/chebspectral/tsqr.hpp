#ifndef CHEBSPECTRAL_TSQR_HPP
#define CHEBSPECTRAL_TSQR_HPP

// Tall-skinny QR over a 1D rank order: local QR at the leaves, then a
// reduction tree that stacks and refactors the small R factors. Q is formed
// afterwards from the per-level factors without communication.

#include "dense.hpp"
#include "dist_spmm.hpp"
#include "orthonormalize.hpp"
#include "procgrid.hpp"

#include <stdexcept>
#include <vector>

namespace chebspectral {

struct TsqrOptions {
  int branching = 2;         // children per tree node
  bool flip_r_sign = false;  // fault injection: violate the sign convention
};

/// Per-rank factors of one TSQR.
struct TsqrTree {
  DenseBlock leaf_q;                // local rows x n
  std::vector<DenseBlock> level_q;  // n x n slice of each level's Q for this rank
  DenseBlock r;                     // n x n, replicated
  bool flipped = false;

  Index levels() const { return static_cast<Index>(level_q.size()); }
};

/// Tree height for p leaves and the given branching.
inline Index tsqr_levels(Index p, int branching) {
  Index l = 0;
  for (Index s = 1; s < p; s *= branching) ++l;
  return l;
}

/// Factor the row-distributed matrix whose local rows are `local`, with the
/// leaves ordered by communicator index. One exchange per tree level.
inline TsqrTree tsqr_factor(const Comm& c, const DenseBlock& local, TsqrOptions opt = {}) {
  if (opt.branching < 2) throw std::invalid_argument("tsqr: branching must be >= 2");
  const Index n = local.cols();
  const Index rows = local.rows();
  Rank& rk = c.rank();
  TsqrTree t;

  // Leaf: zero-pad to a square block when there are fewer rows than columns.
  ThinQr leaf;
  if (rows < n) {
    DenseBlock padded = DenseBlock::Zero(n, n);
    padded.topRows(rows) = local;
    leaf = householder_qr(padded);
  } else {
    leaf = householder_qr(local);
  }
  rk.counters().add_flops(rk.phase(), static_cast<std::uint64_t>(2 * std::max(rows, n) * n * n));
  t.leaf_q = leaf.q.topRows(rows);
  DenseBlock r = std::move(leaf.r);

  const Index size = c.size();
  const Index me = c.index();
  const Index b = opt.branching;
  for (Index s = 1; s < size; s *= b) {
    const Index group = s * b;
    const Index gbase = (me / group) * group;
    const Index gsize = std::min(group, size - gbase);
    const Index nsub = (gsize + s - 1) / s;
    const Index mine = (me - gbase) / s;
    const Index off = me - (gbase + mine * s);
    auto sub_size = [&](Index k) { return std::min(s, size - (gbase + k * s)); };
    const Index my_size = sub_size(mine);

    c.charge("tsqr_exchange", cost_model::allgather(nsub, n * n));
    // Every rank receives each sibling R from the sibling member at its own
    // offset (modulo the sibling size) and sends its R to every sibling
    // member that maps back onto it.
    const Payload rp = to_payload(r);
    for (Index k = 0; k < nsub; ++k) {
      if (k == mine) continue;
      for (Index o = off; o < sub_size(k); o += my_size)
        c.send(static_cast<int>(gbase + k * s + o), tags::exchange, rp);
    }
    DenseBlock stacked(nsub * n, n);
    for (Index k = 0; k < nsub; ++k) {
      if (k == mine) {
        stacked.middleRows(k * n, n) = r;
        continue;
      }
      const Payload in = c.recv(static_cast<int>(gbase + k * s + off % sub_size(k)), tags::exchange);
      if (in.size() != static_cast<std::size_t>(n * n))
        throw CommError("tsqr: column count differs across ranks");
      stacked.middleRows(k * n, n) = from_payload(in, n, n);
    }
    ThinQr f = householder_qr(stacked);
    rk.counters().add_flops(rk.phase(), static_cast<std::uint64_t>(2 * nsub * n * n * n));
    t.level_q.push_back(f.q.middleRows(mine * n, n));
    r = std::move(f.r);
  }
  if (opt.flip_r_sign && n > 0) {
    r.row(0) *= -1.0;
    t.flipped = true;
  }
  t.r = std::move(r);
  return t;
}

/// Local rows of the explicit Q: leaf Q times the top-down product of this
/// rank's slices of the level factors. No communication.
inline DenseBlock tsqr_form_q(const TsqrTree& t) {
  const Index n = t.leaf_q.cols();
  DenseBlock m = DenseBlock::Identity(n, n);
  for (auto it = t.level_q.rbegin(); it != t.level_q.rend(); ++it) m = (*it * m).eval();
  DenseBlock q = t.leaf_q * m;
  if (t.flipped && n > 0) q.col(0) *= -1.0;
  return q;
}

/// Thin QR of a row-distributed block (local Q rows, replicated R).
inline ThinQr tsqr(const Comm& c, const DenseBlock& local, TsqrOptions opt = {}) {
  TsqrTree t = tsqr_factor(c, local, opt);
  return {tsqr_form_q(t), std::move(t.r)};
}

/// TSQR of a distributed dense block over the world communicator in rank
/// order.
inline TsqrTree tsqr_factor(Rank& r, const DistDense1D& v, TsqrOptions opt = {}) {
  return tsqr_factor(r.world(), v.local, opt);
}

inline DistDense1D tsqr_form_q(const TsqrTree& t, const DistDense1D& like) {
  DistDense1D out = like;
  out.local = tsqr_form_q(t);
  return out;
}

/// Orthonormalize the local rows `x` against the orthonormal `locked` (same
/// row distribution) with two block Gram-Schmidt passes and TSQR. Gram sums
/// run as a grid row allreduce followed by a column allreduce.
inline void ortho_block_against(Rank& r, const GridTopology& g,
                                const Eigen::Ref<const DenseBlock>& locked, DenseBlock& x,
                                Index row_offset, std::uint64_t seed, std::uint64_t& draw,
                                TsqrOptions opt = {}) {
  const Comm world = r.world();
  const Index rows = x.rows();
  block_cgs_qr(
      locked, x, [&](DenseBlock& m) { grid_allreduce(r, g, m); },
      [&](const DenseBlock& y) { return tsqr(world, y, opt); },
      [&](Index, std::uint64_t d) {
        return random_rows(row_offset, rows, 1, seed, kReplaceStream + d, 0).col(0).eval();
      },
      draw);
}

inline DistDense1D ortho_block_against(Rank& r, const DistDense1D& v_new,
                                       const DistDense1D& v_locked, std::uint64_t seed = 0,
                                       TsqrOptions opt = {}) {
  if (v_locked.cols() > 0) require_same_layout(v_new, v_locked, "ortho_block_against");
  DistDense1D out = v_new;
  std::uint64_t draw = 0;
  ortho_block_against(r, v_new.grid, v_locked.local, out.local, v_new.row_begin(), seed, draw,
                      opt);
  return out;
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_TSQR_HPP
