#ifndef CHEBSPECTRAL_BCHDAV_HPP
#define CHEBSPECTRAL_BCHDAV_HPP

#include "chebyshev.hpp"
#include "csr.hpp"
#include "dense.hpp"
#include "orthonormalize.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace chebspectral {

enum class OrthoMethod {
  dgks,          ///< column-by-column DGKS (sequential default)
  block_cgs_qr,  ///< block Gram-Schmidt + QR, the scheme used by the distributed solver
};

/// Solver parameters. Zero for act_max, dim_max or k_ri selects the default
/// derived from k_want and k_b.
struct SolverConfig {
  Index k_want = 4;
  Index k_b = 4;
  int m = 11;
  Index act_max = 0;
  Index dim_max = 0;
  Index k_ri = 0;
  double tol = 1e-8;
  Index itmax = 300;
  std::uint64_t seed = 42;
  OrthoMethod ortho = OrthoMethod::dgks;

  /// Fill defaults for an n x n problem and validate.
  ///
  ///   act_max = max(5 k_b, 30)
  ///   dim_max = max(act_max + 2 k_b, k_want + 30)
  ///   k_ri    = max(floor(act_max / 2), act_max - 3 k_b)
  ///
  /// For tiny problems the subspace bounds are capped at n, and a default
  /// block size is shrunk so that k_b <= k_ri < act_max still holds.
  SolverConfig resolved(Index n) const {
    SolverConfig c = *this;
    if (n < 1) throw std::invalid_argument("SolverConfig: empty problem");
    if (c.k_want < 1 || c.k_want > n)
      throw std::invalid_argument("SolverConfig: need 1 <= k_want <= n");
    if (c.k_b < 1) throw std::invalid_argument("SolverConfig: k_b must be >= 1");
    if (c.m < 2) throw std::invalid_argument("SolverConfig: filter degree m must be >= 2");
    if (!(c.tol >= 0.0)) throw std::invalid_argument("SolverConfig: tol must be >= 0");
    if (c.itmax < 1) throw std::invalid_argument("SolverConfig: itmax must be >= 1");
    if (act_max == 0 && dim_max == 0 && k_ri == 0)
      c.k_b = std::min(c.k_b, std::max<Index>(1, n / 3));
    if (c.act_max == 0) c.act_max = std::min(std::max<Index>(5 * c.k_b, 30), n);
    if (c.dim_max == 0)
      c.dim_max = std::min(std::max(c.act_max + 2 * c.k_b, c.k_want + 30), n);
    if (act_max == 0) c.act_max = std::min(c.act_max, c.dim_max);
    if (c.k_ri == 0) {
      c.k_ri = std::max(c.act_max / 2, c.act_max - 3 * c.k_b);
      if (c.k_ri >= c.act_max) c.k_ri = c.act_max - 1;
    }
    c.validate(n);
    return c;
  }

  void validate(Index n) const {
    if (!(k_b <= k_ri && k_ri < act_max && act_max <= dim_max))
      throw std::invalid_argument(
          "SolverConfig: need k_b <= k_ri < act_max <= dim_max (k_b=" + std::to_string(k_b) +
          ", k_ri=" + std::to_string(k_ri) + ", act_max=" + std::to_string(act_max) +
          ", dim_max=" + std::to_string(dim_max) + ")");
    if (dim_max > n) throw std::invalid_argument("SolverConfig: dim_max exceeds n");
    if (k_want > dim_max - k_b)
      throw std::invalid_argument("SolverConfig: k_want too large for dim_max");
  }
};

/// Iteration state. V and W hold the local rows (all rows when sequential).
///
///   V(:, 0:k_c)          locked eigenvectors, sorted by eval
///   V(:, k_c:k_sub)      active basis, k_act = k_sub - k_c columns
///   W(:, 0:k_act)        A times the active basis
///   H(0:k_act, 0:k_act)  Rayleigh quotient of the active basis
struct SolverState {
  DenseBlock V;
  DenseBlock W;
  DenseBlock H;
  Eigen::VectorXd ritz;  // ascending Ritz values of H (wanted end first)
  DenseBlock Y;          // Ritz vectors of H
  Index k_c = 0;
  Index k_sub = 0;
  Index k_act = 0;
  Index k_i = 0;
  Index k_old = 0;
  std::vector<double> eval;   // locked Ritz values, ascending
  std::vector<double> eres;   // residual norm at lock time, same order as eval
  std::vector<Index> lock_seq;  // lock order, for stable tie-breaking
  double low_nwb = 0.0;
  std::uint64_t draw = 0;     // random replacement counter
  Index iteration = 0;
  DenseBlock v_tmp;           // block to be filtered next
  Eigen::VectorXd last_residuals;
  Index inner_restarts = 0;
  Index outer_restarts = 0;
};

struct EigResult {
  Eigen::VectorXd values;       // k_want values, ascending
  DenseBlock vectors;           // N x k_want (local rows when distributed)
  Eigen::VectorXd residuals;    // ||A v_i - lambda_i v_i||_2
  Index iterations = 0;
  Index n_converged = 0;
  bool converged = false;
  SolverConfig config;          // resolved configuration actually used
  FilterBounds bounds;          // initial filter bounds
};

/// Cost-accounting categories (rows of the per-iteration complexity table).
enum class Stage { filter, spmm, ortho, rq_update, residual, other };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::filter: return "filter";
    case Stage::spmm: return "spmm";
    case Stage::ortho: return "orthonormalization";
    case Stage::rq_update: return "rq_update";
    case Stage::residual: return "residual";
    case Stage::other: return "other";
  }
  return "other";
}

/// Sequential backend: everything lives in one address space.
class SerialBackend {
 public:
  SerialBackend(const CsrMatrix& a, OrthoMethod ortho) : a_(a), ortho_(ortho) {}

  Index local_rows() const { return a_.rows(); }
  Index global_rows() const { return a_.rows(); }
  Index row_offset() const { return 0; }

  void apply(const DenseBlock& x, DenseBlock& out, Stage) const { spmm_into(a_, x, out); }

  DenseBlock filter(const DenseBlock& x, const FilterBounds& bounds, int m) const {
    return chebyshev_filter(a_, x, bounds, m);
  }

  template <class M>
  void sum(M&&, Stage) const {}

  void orthonormalize(DenseBlock& v, Index k_sub, Index k_b, std::uint64_t seed,
                      std::uint64_t& draw) const {
    if (ortho_ == OrthoMethod::dgks) {
      dgks_in_place(v, k_sub, k_b, seed, draw);
      return;
    }
    DenseBlock x = v.middleCols(k_sub, k_b);
    block_cgs_qr(
        v.leftCols(k_sub), x, [](auto&) {}, [](const DenseBlock& y) { return householder_qr(y); },
        [&](Index, std::uint64_t d) {
          return random_rows(0, v.rows(), 1, seed, kReplaceStream + d, 0).col(0).eval();
        },
        draw);
    v.middleCols(k_sub, k_b) = x;
  }

  void check_replication(const SolverState&) const {}

 private:
  const CsrMatrix& a_;
  OrthoMethod ortho_;
};

namespace bchdav {

inline constexpr std::uint64_t kInitStream = 0x1417'0000'0000ULL;
inline constexpr std::uint64_t kFillStream = 0x2f11'0000'0000ULL;

/// Fresh state with buffers sized for `cfg` and the first block to filter
/// (initial vectors, padded with seeded random columns).
template <class Backend>
SolverState init_state(const Backend& be, const SolverConfig& cfg, const DenseBlock* v_init,
                       const FilterBounds& bounds) {
  SolverState st;
  const Index rows = be.local_rows();
  st.V = DenseBlock::Zero(rows, cfg.dim_max);
  st.W = DenseBlock::Zero(rows, cfg.act_max);
  st.H = DenseBlock::Zero(cfg.act_max, cfg.act_max);
  st.low_nwb = bounds.a0;
  st.v_tmp = DenseBlock(rows, cfg.k_b);
  const Index k_init = v_init ? v_init->cols() : 0;
  const Index take = std::min(k_init, cfg.k_b);
  if (take > 0) st.v_tmp.leftCols(take) = v_init->leftCols(take);
  if (take < cfg.k_b)
    st.v_tmp.rightCols(cfg.k_b - take) =
        random_rows(be.row_offset(), rows, cfg.k_b - take, cfg.seed, kInitStream, take);
  st.k_i = cfg.k_b;
  return st;
}

/// Steps 5-6: filter v_tmp into V(:, k_sub:k_sub+k_b) and orthonormalize it
/// against V(:, 0:k_sub).
template <class Backend>
void expand_basis(Backend& be, SolverState& st, const SolverConfig& cfg,
                  const FilterBounds& bounds) {
  FilterBounds fb = bounds;
  fb.a0 = st.low_nwb;
  st.V.middleCols(st.k_sub, cfg.k_b) = be.filter(st.v_tmp, fb, cfg.m);
  be.orthonormalize(st.V, st.k_sub, cfg.k_b, cfg.seed, st.draw);
}

/// Steps 7-9: extend W by A times the new block, fill the trailing k_b
/// columns of H, symmetrize, and eigendecompose the active H (ascending).
template <class Backend>
void rayleigh_ritz_update(Backend& be, SolverState& st, const SolverConfig& cfg) {
  const Index kb = cfg.k_b;
  DenseBlock aw;
  be.apply(st.V.middleCols(st.k_sub, kb), aw, Stage::spmm);
  st.W.middleCols(st.k_act, kb) = aw;
  st.k_act += kb;
  st.k_sub += kb;

  const Index ka = st.k_act;
  DenseBlock b = st.V.middleCols(st.k_c, ka).transpose() * st.W.middleCols(ka - kb, kb);
  be.sum(b, Stage::rq_update);
  st.H.block(0, ka - kb, ka, kb) = b;
  st.H.block(ka - kb, 0, kb, ka) = b.transpose();
  const DenseBlock corner = b.bottomRows(kb);
  st.H.block(ka - kb, ka - kb, kb, kb) = (corner + corner.transpose()) * 0.5;

  SymEig eig = sym_eig(st.H.topLeftCorner(ka, ka));
  st.ritz = std::move(eig.values);
  st.Y = std::move(eig.vectors);
  st.k_old = ka;
}

/// Step 10: shrink the active window to k_ri when adding another block
/// would exceed act_max. Returns true when the restart fired.
inline bool inner_restart(SolverState& st, const SolverConfig& cfg) {
  if (st.k_act + cfg.k_b <= cfg.act_max) return false;
  st.k_act = cfg.k_ri;
  st.k_sub = st.k_act + st.k_c;
  ++st.inner_restarts;
  return true;
}

/// Step 11: rotate the active basis and W onto the leading k_act Ritz vectors.
inline void rotate(SolverState& st) {
  const auto y = st.Y.topLeftCorner(st.k_old, st.k_act);
  st.V.middleCols(st.k_c, st.k_act) = (st.V.middleCols(st.k_c, st.k_old) * y).eval();
  st.W.leftCols(st.k_act) = (st.W.leftCols(st.k_old) * y).eval();
  st.ritz.conservativeResize(st.k_act);
}

/// Steps 12-15: residual test of the leading k_b Ritz pairs, locking of the
/// converged ones, W shift and H reset. Returns the number newly locked.
template <class Backend>
Index residual_deflate(Backend& be, SolverState& st, const SolverConfig& cfg, double tol) {
  const Index kb = std::min(cfg.k_b, st.k_act);
  DenseBlock r;
  be.apply(st.V.middleCols(st.k_c, kb), r, Stage::residual);
  r -= st.V.middleCols(st.k_c, kb) * st.ritz.head(kb).asDiagonal();
  DenseBlock sq = r.colwise().squaredNorm();
  be.sum(sq, Stage::residual);
  st.last_residuals = sq.row(0).transpose().cwiseSqrt();

  std::vector<Index> conv, rest;
  for (Index j = 0; j < kb; ++j) (st.last_residuals(j) <= tol ? conv : rest).push_back(j);
  const Index ec = static_cast<Index>(conv.size());
  if (ec == 0) {
    st.H.setZero();
    st.H.topLeftCorner(st.k_act, st.k_act).diagonal() = st.ritz.head(st.k_act);
    return 0;
  }

  // Move converged columns to the front of the active window (stable).
  std::vector<Index> order = conv;
  order.insert(order.end(), rest.begin(), rest.end());
  for (Index j = kb; j < st.k_act; ++j) order.push_back(j);
  const DenseBlock va = st.V.middleCols(st.k_c, st.k_act);
  const DenseBlock wa = st.W.leftCols(st.k_act);
  const Eigen::VectorXd ra = st.ritz;
  const Eigen::VectorXd res = st.last_residuals;
  for (Index j = 0; j < st.k_act; ++j) {
    st.V.col(st.k_c + j) = va.col(order[j]);
    st.W.col(j) = wa.col(order[j]);
    st.ritz(j) = ra(order[j]);
  }

  // Lock and keep V(:, 0:k_c) sorted by (value, lock order).
  const Index next_seq = static_cast<Index>(st.lock_seq.size());
  for (Index j = 0; j < ec; ++j) {
    st.eval.push_back(st.ritz(j));
    st.eres.push_back(res(conv[j]));
    st.lock_seq.push_back(next_seq + j);
  }
  const Index kc_new = st.k_c + ec;
  std::vector<Index> perm(kc_new);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::stable_sort(perm.begin(), perm.end(), [&](Index x, Index y) {
    if (st.eval[x] != st.eval[y]) return st.eval[x] < st.eval[y];
    return st.lock_seq[x] < st.lock_seq[y];
  });
  const DenseBlock locked = st.V.leftCols(kc_new);
  const auto ev = st.eval, er = st.eres;
  const auto ls = st.lock_seq;
  for (Index j = 0; j < kc_new; ++j) {
    st.V.col(j) = locked.col(perm[j]);
    st.eval[j] = ev[perm[j]];
    st.eres[j] = er[perm[j]];
    st.lock_seq[j] = ls[perm[j]];
  }
  st.k_c = kc_new;

  // Steps 14-15.
  const Index ka = st.k_act - ec;
  st.W.leftCols(ka) = st.W.middleCols(ec, ka).eval();
  const Eigen::VectorXd remaining = st.ritz.segment(ec, ka);
  st.ritz = remaining;
  st.k_act = ka;
  st.H.setZero();
  st.H.topLeftCorner(ka, ka).diagonal() = remaining;
  return ec;
}

/// Step 16: truncate the whole basis to k_c + k_ro columns when adding
/// another block would exceed dim_max, with k_ro = dim_max - 2 k_b - k_c.
/// Returns true when the restart fired.
inline bool outer_restart(SolverState& st, const SolverConfig& cfg) {
  if (st.k_sub + cfg.k_b <= cfg.dim_max) return false;
  const Index k_ro = std::max<Index>(0, cfg.dim_max - 2 * cfg.k_b - st.k_c);
  st.k_sub = st.k_c + k_ro;
  st.k_act = k_ro;
  st.ritz.conservativeResize(std::min<Index>(st.ritz.size(), k_ro));
  ++st.outer_restarts;
  return true;
}

/// Steps 17-18: next block to filter (unused initial vectors first, then the
/// best non-converged Ritz vectors) and the new lower bound of the unwanted
/// spectrum (median of the non-converged Ritz values).
template <class Backend>
void next_block(const Backend& be, SolverState& st, const SolverConfig& cfg, Index ec,
                const DenseBlock* v_init, const FilterBounds& bounds) {
  const Index k_init = v_init ? v_init->cols() : 0;
  const Index from_init = std::clamp<Index>(std::min(ec, k_init - st.k_i), 0, cfg.k_b);
  Index col = 0;
  if (from_init > 0) {
    st.v_tmp.leftCols(from_init) = v_init->middleCols(st.k_i, from_init);
    col = from_init;
  }
  st.k_i += from_init;
  const Index from_ritz = std::min(cfg.k_b - col, st.k_act);
  if (from_ritz > 0) {
    st.v_tmp.middleCols(col, from_ritz) = st.V.middleCols(st.k_c, from_ritz);
    col += from_ritz;
  }
  if (col < cfg.k_b)
    st.v_tmp.rightCols(cfg.k_b - col) =
        random_rows(be.row_offset(), be.local_rows(), cfg.k_b - col, cfg.seed,
                    kFillStream + static_cast<std::uint64_t>(st.iteration), col);

  if (st.k_act > 0) {
    std::vector<double> r(st.ritz.data(), st.ritz.data() + st.ritz.size());
    std::sort(r.begin(), r.end());
    const std::size_t h = r.size() / 2;
    const double med = r.size() % 2 == 1 ? r[h] : 0.5 * (r[h - 1] + r[h]);
    if (med > bounds.a && med < bounds.b) st.low_nwb = med;
  }
}

/// Assemble the result from the locked set, topped up with the leading
/// non-converged Ritz pairs when the run stopped early.
inline EigResult finish(const SolverState& st, const SolverConfig& cfg,
                        const FilterBounds& bounds, bool converged) {
  EigResult out;
  const Index k = cfg.k_want;
  out.values.resize(k);
  out.residuals.resize(k);
  out.vectors.resize(st.V.rows(), k);
  const Index from_locked = std::min(st.k_c, k);
  for (Index j = 0; j < from_locked; ++j) {
    out.values(j) = st.eval[j];
    out.residuals(j) = st.eres[j];
    out.vectors.col(j) = st.V.col(j);
  }
  for (Index j = from_locked; j < k; ++j) {
    const Index a = j - from_locked;
    if (a < st.k_act && a < st.ritz.size()) {
      out.values(j) = st.ritz(a);
      out.vectors.col(j) = st.V.col(st.k_c + a);
    } else {
      out.values(j) = std::numeric_limits<double>::quiet_NaN();
      out.vectors.col(j).setZero();
    }
    out.residuals(j) = std::numeric_limits<double>::infinity();
  }
  out.iterations = st.iteration;
  out.n_converged = st.k_c;
  out.converged = converged;
  out.config = cfg;
  out.bounds = bounds;
  return out;
}

using IterationHook = std::function<void(const SolverState&)>;

/// The Block Chebyshev-Davidson iteration with inner/outer restart,
/// deflation and progressive filtering, over any backend.
template <class Backend>
EigResult run(Backend& be, const SolverConfig& cfg, const DenseBlock* v_init,
              const FilterBounds& bounds, const IterationHook& hook = {}) {
  if (!bounds.valid()) throw std::invalid_argument("bchdav: invalid filter bounds");
  SolverState st = init_state(be, cfg, v_init, bounds);
  while (st.iteration < cfg.itmax) {
    ++st.iteration;
    expand_basis(be, st, cfg, bounds);
    rayleigh_ritz_update(be, st, cfg);
    inner_restart(st, cfg);
    rotate(st);
    const Index ec = residual_deflate(be, st, cfg, cfg.tol);
    be.check_replication(st);
    if (hook) hook(st);
    if (st.k_c >= cfg.k_want) return finish(st, cfg, bounds, true);
    outer_restart(st, cfg);
    next_block(be, st, cfg, ec, v_init, bounds);
  }
  return finish(st, cfg, bounds, false);
}

}  // namespace bchdav

/// Default bounds for a normalized Laplacian: [0, 2] with the unwanted cut
/// at k_want / N of the way up.
inline FilterBounds default_bounds(Index k_want, Index n) {
  return FilterBounds::laplacian(k_want, n);
}

/// Smallest k_want eigenpairs of a symmetric sparse matrix.
inline EigResult bchdav_solve(const CsrMatrix& a, const SolverConfig& cfg,
                              const std::optional<DenseBlock>& v_init = std::nullopt,
                              const std::optional<FilterBounds>& bounds = std::nullopt,
                              const bchdav::IterationHook& hook = {}) {
  if (a.rows() != a.cols()) throw std::invalid_argument("bchdav_solve: matrix not square");
  if (!a.is_symmetric()) throw std::invalid_argument("bchdav_solve: matrix not symmetric");
  const SolverConfig rc = cfg.resolved(a.rows());
  if (v_init && v_init->rows() != a.rows())
    throw std::invalid_argument("bchdav_solve: v_init row mismatch");
  const FilterBounds fb = bounds.value_or(default_bounds(rc.k_want, a.rows()));
  SerialBackend be(a, rc.ortho);
  return bchdav::run(be, rc, v_init ? &*v_init : nullptr, fb, hook);
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_BCHDAV_HPP
