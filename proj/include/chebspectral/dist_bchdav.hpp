#ifndef CHEBSPECTRAL_DIST_BCHDAV_HPP
#define CHEBSPECTRAL_DIST_BCHDAV_HPP

// Distributed Block Chebyshev-Davidson: the shared driver in bchdav.hpp run
// over a backend whose tall matrices are row blocks in V-layout, whose sums
// are grid allreduces, and whose orthonormalization is block CGS + TSQR.
// Small matrices (H, Ritz pairs, counters) are replicated on every rank.

#include "bchdav.hpp"
#include "dist_spmm.hpp"
#include "procgrid.hpp"
#include "tsqr.hpp"

#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>

namespace chebspectral {

class ReplicationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DistSolveOptions {
  bool check_replication = false;  // hash replicated state after every iteration
  TsqrOptions tsqr;
  DistFaults faults;
};

/// FNV-1a over the replicated part of the state.
inline std::uint64_t replicated_state_hash(const SolverState& st) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  auto mix_mat = [&](const auto& m) {
    const DenseBlock d = m;
    mix(d.data(), sizeof(double) * static_cast<std::size_t>(d.size()));
  };
  mix_mat(st.H.topLeftCorner(st.k_act, st.k_act));
  mix_mat(st.ritz);
  mix_mat(st.Y);
  mix(st.eval.data(), sizeof(double) * st.eval.size());
  const Index counters[] = {st.k_c, st.k_sub, st.k_act, st.k_i, st.iteration};
  mix(counters, sizeof(counters));
  mix(&st.low_nwb, sizeof(double));
  mix(&st.draw, sizeof(st.draw));
  return h;
}

class DistBackend {
 public:
  DistBackend(Rank& r, const DistSparse2D& a, const DistSparse2D& ident_t,
              DistSolveOptions opt = {})
      : r_(r), a_(a), ident_t_(ident_t), opt_(opt) {
    if (a.rank != r.id() || ident_t.rank != r.id())
      throw std::invalid_argument("DistBackend: tiles belong to another rank");
    if (a.grid.is_transposed() || ident_t.grid != a.grid.transposed() || !ident_t.identity)
      throw LayoutError("DistBackend: need A on the grid and the identity on its transpose");
    const GridSplit s{a.global_n, a.grid.q()};
    const Index b = DistDense1D::block_of(a.grid, Layout::v, r.id());
    rows_ = s.fine_size(b);
    offset_ = s.fine_begin(b);
  }

  Index local_rows() const { return rows_; }
  Index global_rows() const { return a_.global_n; }
  Index row_offset() const { return offset_; }
  const GridTopology& grid() const { return a_.grid; }

  void apply(const DenseBlock& x, DenseBlock& out, Stage stage) {
    PhaseScope ps(r_, stage_name(stage));
    DistOperator{&a_, &ident_t_, opt_.faults}.apply_local(r_, x, out);
  }

  DenseBlock filter(const DenseBlock& x, const FilterBounds& bounds, int m) {
    PhaseScope ps(r_, stage_name(Stage::filter));
    return dist_chebyshev_filter(r_, a_, ident_t_, wrap(x), bounds, m, opt_.faults).local;
  }

  void sum(DenseBlock& m, Stage stage) {
    PhaseScope ps(r_, stage_name(stage));
    grid_allreduce(r_, a_.grid, m);
  }

  void orthonormalize(DenseBlock& v, Index k_sub, Index k_b, std::uint64_t seed,
                      std::uint64_t& draw) {
    PhaseScope ps(r_, stage_name(Stage::ortho));
    DenseBlock x = v.middleCols(k_sub, k_b);
    TsqrOptions t = opt_.tsqr;
    t.flip_r_sign = t.flip_r_sign || opt_.faults.flip_r_sign;
    ortho_block_against(r_, a_.grid, v.leftCols(k_sub), x, offset_, seed, draw, t);
    v.middleCols(k_sub, k_b) = x;
  }

  /// Debug check that every rank holds bit-identical replicated state.
  void check_replication(const SolverState& st) {
    if (!opt_.check_replication) return;
    PhaseScope ps(r_, "debug");
    const std::uint64_t h = replicated_state_hash(st);
    const Payload mine{static_cast<double>(h >> 32), static_cast<double>(h & 0xffffffffULL)};
    const Payload all = allgather(r_.world(), mine);
    for (std::size_t k = 0; k < all.size(); k += 2)
      if (all[k] != mine[0] || all[k + 1] != mine[1])
        throw ReplicationError("replicated solver state differs between rank " +
                               std::to_string(r_.id()) + " and rank " +
                               std::to_string(k / 2) + " at iteration " +
                               std::to_string(st.iteration));
  }

  DistDense1D wrap(const DenseBlock& x) const {
    DistDense1D d;
    d.grid = a_.grid;
    d.layout = Layout::v;
    d.rank = r_.id();
    d.global_n = a_.global_n;
    d.local = x;
    return d;
  }

 private:
  Rank& r_;
  const DistSparse2D& a_;
  const DistSparse2D& ident_t_;
  DistSolveOptions opt_;
  Index rows_ = 0;
  Index offset_ = 0;
};

/// Rank-level solve. `v_init_local` holds this rank's V-layout rows of the
/// initial vectors; result vectors are local rows as well.
inline EigResult dist_bchdav_solve(Rank& r, const DistSparse2D& a, const DistSparse2D& ident_t,
                                   const SolverConfig& cfg,
                                   const DenseBlock* v_init_local = nullptr,
                                   const std::optional<FilterBounds>& bounds = std::nullopt,
                                   DistSolveOptions opt = {},
                                   const bchdav::IterationHook& hook = {}) {
  const SolverConfig rc = cfg.resolved(a.global_n);
  const FilterBounds fb = bounds.value_or(default_bounds(rc.k_want, a.global_n));
  DistBackend be(r, a, ident_t, opt);
  if (v_init_local && v_init_local->rows() != be.local_rows())
    throw std::invalid_argument("dist_bchdav_solve: v_init row mismatch");
  return bchdav::run(be, rc, v_init_local, fb, hook);
}

struct DistRunResult {
  EigResult result;                    // vectors gathered to full length
  std::vector<CostCounters> counters;  // per rank
};

/// Runs the distributed solver on p simulated ranks for a replicated global
/// matrix and gathers the eigenvectors.
inline DistRunResult dist_bchdav_run(const CsrMatrix& a, const SolverConfig& cfg, int p,
                                     const std::optional<DenseBlock>& v_init = std::nullopt,
                                     const std::optional<FilterBounds>& bounds = std::nullopt,
                                     DistSolveOptions opt = {}, RunOptions run = {}) {
  if (a.rows() != a.cols()) throw std::invalid_argument("dist_bchdav_run: matrix not square");
  if (!a.is_symmetric()) throw std::invalid_argument("dist_bchdav_run: matrix not symmetric");
  if (v_init && v_init->rows() != a.rows())
    throw std::invalid_argument("dist_bchdav_run: v_init row mismatch");
  const GridTopology g(p);
  cfg.resolved(a.rows());  // validate before spawning ranks
  DistRunResult out;
  out.counters = run_ranks(
      p,
      [&](Rank& r) {
        const DistSparse2D at = distribute_sparse(r.id(), a, g);
        const DistSparse2D it = distribute_identity(r.id(), a.rows(), g.transposed());
        std::optional<DenseBlock> vin;
        if (v_init) vin = distribute_dense(r.id(), *v_init, g, Layout::v).local;
        EigResult res = dist_bchdav_solve(r, at, it, cfg, vin ? &*vin : nullptr, bounds, opt);
        PhaseScope ps(r, "collect");
        DistDense1D vec = distribute_dense(r.id(), DenseBlock::Zero(a.rows(), 0), g, Layout::v);
        vec.local = res.vectors;
        res.vectors = collect_dense(r, vec);
        if (r.id() == 0) out.result = std::move(res);
      },
      run);
  return out;
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_DIST_BCHDAV_HPP
