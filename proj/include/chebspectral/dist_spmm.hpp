#ifndef CHEBSPECTRAL_DIST_SPMM_HPP
#define CHEBSPECTRAL_DIST_SPMM_HPP

// A-stationary 1.5D SpMM on a q x q grid. A is tiled in 2D and never moves;
// the tall-skinny operand lives in 1D row blocks that are gathered down grid
// columns, and partial products are reduce-scattered across grid rows.

#include "chebyshev.hpp"
#include "csr.hpp"
#include "procgrid.hpp"
#include "split.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace chebspectral {

class LayoutError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Which fine row block a rank owns, relative to the grid the block is
/// attached to: V-layout gives P(i, j) block j*q + i, U-layout block i*q + j.
enum class Layout { v, u };

inline const char* layout_name(Layout l) { return l == Layout::v ? "V-layout" : "U-layout"; }

/// 2D tile of a distributed sparse matrix held by one rank.
struct DistSparse2D {
  GridTopology grid{1};
  int rank = 0;
  Index global_n = 0;
  CsrMatrix tile;
  Index row_begin = 0, row_end = 0;  // coarse block of the logical grid row
  Index col_begin = 0, col_end = 0;  // coarse block of the logical grid column
  bool identity = false;             // diagonal of ones, local product is a copy

  /// The same tiles seen through the transposed grid. Valid for symmetric A:
  /// the tile at logical (j, i) of the transposed grid is the transpose of
  /// this one, so nothing moves between ranks.
  DistSparse2D transposed() const {
    DistSparse2D t = *this;
    t.grid = grid.transposed();
    t.tile = tile.transposed();
    t.row_begin = col_begin;
    t.row_end = col_end;
    t.col_begin = row_begin;
    t.col_end = row_end;
    return t;
  }
};

/// One rank's row block of a distributed tall-skinny matrix.
struct DistDense1D {
  GridTopology grid{1};
  Layout layout = Layout::v;
  int rank = 0;
  Index global_n = 0;
  DenseBlock local;

  Index cols() const { return local.cols(); }
  GridSplit split() const { return {global_n, grid.q()}; }

  /// Fine block index owned by this rank.
  Index block() const { return block_of(grid, layout, rank); }
  Index row_begin() const { return split().fine_begin(block()); }

  static Index block_of(const GridTopology& g, Layout l, int rank) {
    const auto [i, j] = g.coords(rank);
    return l == Layout::v ? Index{j} * g.q() + i : Index{i} * g.q() + j;
  }

  /// The same physical data described relative to `g2`, which must be this
  /// grid or its transpose (U-layout on a grid is V-layout on its transpose).
  DistDense1D on_grid(const GridTopology& g2) const {
    DistDense1D d = *this;
    if (g2 == grid) return d;
    if (g2 != grid.transposed())
      throw LayoutError("on_grid: target is neither the grid nor its transpose");
    d.grid = g2;
    d.layout = layout == Layout::v ? Layout::u : Layout::v;
    return d;
  }

  /// True when both use the same physical ownership map (layouts compared
  /// after moving to a common grid orientation).
  bool same_ownership(const DistDense1D& o) const {
    if (global_n != o.global_n || grid.p() != o.grid.p()) return false;
    if (o.grid != grid && o.grid != grid.transposed()) return false;
    return on_grid(o.grid).layout == o.layout;
  }
};

inline void require_same_layout(const DistDense1D& x, const DistDense1D& y, const char* where) {
  if (!x.same_ownership(y))
    throw LayoutError(std::string("layout mismatch in ") + where + ": " + layout_name(x.layout) +
                      (x.grid.is_transposed() ? " (transposed grid)" : "") + " vs " +
                      layout_name(y.layout) + (y.grid.is_transposed() ? " (transposed grid)" : ""));
}

// ---------------------------------------------------------------------------
// Distribution plumbing

inline DistSparse2D distribute_sparse(int rank, const CsrMatrix& a, const GridTopology& g) {
  if (a.rows() != a.cols()) throw std::invalid_argument("distribute_sparse: matrix not square");
  const GridSplit s{a.rows(), g.q()};
  const auto [i, j] = g.coords(rank);
  DistSparse2D d;
  d.grid = g;
  d.rank = rank;
  d.global_n = a.rows();
  d.row_begin = s.coarse_begin(i);
  d.row_end = s.coarse_end(i);
  d.col_begin = s.coarse_begin(j);
  d.col_end = s.coarse_end(j);
  d.tile = a.tile(d.row_begin, d.row_end, d.col_begin, d.col_end);
  return d;
}

/// Distributed identity: each tile holds the diagonal entries it intersects.
inline DistSparse2D distribute_identity(int rank, Index n, const GridTopology& g) {
  DistSparse2D d = distribute_sparse(rank, CsrMatrix::identity(n), g);
  d.identity = true;
  return d;
}

inline DistDense1D distribute_dense(int rank, const DenseBlock& v, const GridTopology& g,
                                    Layout layout) {
  DistDense1D d;
  d.grid = g;
  d.layout = layout;
  d.rank = rank;
  d.global_n = v.rows();
  const GridSplit s = d.split();
  const Index b = d.block();
  d.local = v.middleRows(s.fine_begin(b), s.fine_size(b));
  return d;
}

/// Reassembles the global matrix on every rank (world allgather).
inline DenseBlock collect_dense(Rank& r, const DistDense1D& d) {
  if (d.rank != r.id()) throw std::invalid_argument("collect_dense: block of another rank");
  const GridSplit s = d.split();
  const Index mx = s.fine().max_size();
  const Index k = d.cols();
  DenseBlock padded = DenseBlock::Zero(mx, k);
  padded.topRows(d.local.rows()) = d.local;
  const Payload all = allgather(r.world(), to_payload(padded));
  DenseBlock out(d.global_n, k);
  for (int src = 0; src < r.size(); ++src) {
    const Index b = DistDense1D::block_of(d.grid, d.layout, src);
    const DenseBlock blk =
        from_payload(all, mx, k, static_cast<std::size_t>(src) * static_cast<std::size_t>(mx * k));
    out.middleRows(s.fine_begin(b), s.fine_size(b)) = blk.topRows(s.fine_size(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SpMM

/// U = A V with V in V-layout on a's grid; the result is in U-layout.
inline DistDense1D spmm_15d(Rank& r, const DistSparse2D& a, const DistDense1D& v) {
  if (v.grid != a.grid || v.layout != Layout::v || v.global_n != a.global_n || v.rank != r.id() ||
      a.rank != r.id())
    throw LayoutError(std::string("spmm_15d: operand must be in V-layout on the matrix grid, got ") +
                      layout_name(v.layout) +
                      (v.grid != a.grid ? " on a different grid" : ""));
  const GridTopology& g = a.grid;
  const GridSplit s{a.global_n, g.q()};
  const auto [i, j] = g.coords(r.id());
  const Index k = v.cols();
  const Index mx = s.fine().max_size();
  const int q = g.q();

  // Gather the coarse column block J_j down the grid column.
  DenseBlock padded = DenseBlock::Zero(mx, k);
  padded.topRows(v.local.rows()) = v.local;
  const Payload gathered = allgather(col_comm(r, g), to_payload(padded));
  DenseBlock vj(s.coarse_size(j), k);
  for (int l = 0; l < q; ++l) {
    const Index b = Index{j} * q + l;
    const DenseBlock blk = from_payload(gathered, mx, k,
                                        static_cast<std::size_t>(l) * static_cast<std::size_t>(mx * k));
    vj.middleRows(s.fine_begin(b) - s.coarse_begin(j), s.fine_size(b)) = blk.topRows(s.fine_size(b));
  }

  // Local tile product.
  DenseBlock z;
  if (a.identity) {
    z = DenseBlock::Zero(a.row_end - a.row_begin, k);
    for (Index row = 0; row < a.tile.rows(); ++row)
      for (Index e = a.tile.row_ptr()[row]; e < a.tile.row_ptr()[row + 1]; ++e)
        z.row(row) = vj.row(a.tile.col_idx()[e]);
  } else {
    spmm_into(a.tile, vj, z);
    r.counters().add_flops(r.phase(), static_cast<std::uint64_t>(2 * a.tile.nnz() * k));
  }

  // Reduce-scatter the fine blocks of I_i across the grid row.
  std::vector<std::size_t> counts(static_cast<std::size_t>(q));
  Payload partial;
  partial.reserve(static_cast<std::size_t>(z.size()));
  for (int l = 0; l < q; ++l) {
    const Index b = Index{i} * q + l;
    const Index sz = s.fine_size(b);
    counts[static_cast<std::size_t>(l)] = static_cast<std::size_t>(sz * k);
    const DenseBlock slice = z.middleRows(s.fine_begin(b) - s.coarse_begin(i), sz);
    partial.insert(partial.end(), slice.data(), slice.data() + slice.size());
  }
  const Payload mine = reduce_scatter_v(row_comm(r, g), std::move(partial), counts);

  DistDense1D u;
  u.grid = g;
  u.layout = Layout::u;
  u.rank = r.id();
  u.global_n = a.global_n;
  u.local = from_payload(mine, s.fine_size(Index{i} * q + j), k);
  return u;
}

/// U-layout back to V-layout: transpose the grid and multiply by the
/// distributed identity held on the transposed grid.
inline DistDense1D redistribute_u_to_v(Rank& r, const DistSparse2D& ident_t,
                                       const DistDense1D& u) {
  if (u.layout != Layout::u)
    throw LayoutError("redistribute_u_to_v: input must be in U-layout");
  if (!ident_t.identity || ident_t.grid != u.grid.transposed())
    throw LayoutError("redistribute_u_to_v: identity must live on the transposed grid");
  const DistDense1D w = spmm_15d(r, ident_t, u.on_grid(ident_t.grid));
  return w.on_grid(u.grid);
}

/// Fault switches used by the verification harness.
struct DistFaults {
  bool skip_redistribute = false;  // leave A V in U-layout
  bool flip_r_sign = false;        // break the TSQR sign convention
};

/// The distributed operator x -> A x for V-layout blocks: one A-SpMM and one
/// identity redistribution.
struct DistOperator {
  const DistSparse2D* a = nullptr;
  const DistSparse2D* ident_t = nullptr;
  DistFaults faults;

  DistDense1D apply(Rank& r, const DistDense1D& x) const {
    const DistDense1D u = spmm_15d(r, *a, x);
    return faults.skip_redistribute ? u : redistribute_u_to_v(r, *ident_t, u);
  }

  /// Local rows of A x for the local rows `x` of a V-layout block on a's grid.
  void apply_local(Rank& r, const DenseBlock& x, DenseBlock& out) const {
    DistDense1D in;
    in.grid = a->grid;
    in.layout = Layout::v;
    in.rank = r.id();
    in.global_n = a->global_n;
    in.local = x;
    const DistDense1D y = apply(r, in);
    require_same_layout(y, in, "distributed operator");
    out = y.local;
  }
};

/// Degree-m scaled Chebyshev filter on a V-layout block. Every recurrence
/// combine happens after the redistribution, so all operands share V-layout.
inline DistDense1D dist_chebyshev_filter(Rank& r, const DistSparse2D& a,
                                         const DistSparse2D& ident_t, const DistDense1D& v,
                                         const FilterBounds& bounds, int m,
                                         DistFaults faults = {}) {
  if (!bounds.valid()) throw std::invalid_argument("dist_chebyshev_filter: degenerate bounds");
  if (v.layout != Layout::v || v.grid != a.grid)
    throw LayoutError("dist_chebyshev_filter: input must be in V-layout on the matrix grid");
  const DistOperator op{&a, &ident_t, faults};
  DistDense1D out = v;
  out.local = chebyshev_filter_with(
      [&](const DenseBlock& x, DenseBlock& y) { op.apply_local(r, x, y); }, v.local, bounds, m);
  return out;
}

/// Charged (messages, words) of one spmm_15d call per rank for n rows and k
/// columns on a q x q grid.
inline cost_model::Charge spmm_15d_charge(Index n, int q, Index k) {
  const GridSplit s{n, q};
  const Index w = s.fine().max_size() * k;
  const auto ag = cost_model::allgather(q, w);
  const auto rs = cost_model::reduce_scatter(q, w * q);
  return {ag.messages + rs.messages, ag.words + rs.words};
}

/// Charged cost of one distributed filter application: 2m SpMMs (m with A,
/// m with the identity), i.e. 2m allgather / reduce_scatter pairs.
inline cost_model::Charge dist_filter_charge(Index n, int q, Index k, int m) {
  const auto one = spmm_15d_charge(n, q, k);
  return {2 * static_cast<std::uint64_t>(m) * one.messages,
          2 * static_cast<std::uint64_t>(m) * one.words};
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_DIST_SPMM_HPP
