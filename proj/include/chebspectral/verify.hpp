#ifndef CHEBSPECTRAL_VERIFY_HPP
#define CHEBSPECTRAL_VERIFY_HPP

// Self-check harness behind `chebspectral verify`: seeded small instances,
// each library path compared against a dense Eigen reference. Faults can be
// injected to confirm the checks actually bite.

#include "bchdav.hpp"
#include "dist_bchdav.hpp"
#include "dist_spmm.hpp"
#include "graph.hpp"
#include "tsqr.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace chebspectral {

struct VerifyOptions {
  std::uint64_t seed = 1;
  int p = 4;                 // simulated ranks for the distributed checks (square)
  DistFaults faults;         // injected into the distributed and TSQR checks
};

struct PropertyCheck {
  std::string name;
  bool passed = false;
  double value = 0.0;  // measured error
  double tol = 0.0;
  std::string detail;
};

struct VerifyReport {
  std::vector<PropertyCheck> checks;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }

  const PropertyCheck* first_failure() const {
    for (const auto& c : checks)
      if (!c.passed) return &c;
    return nullptr;
  }
};

namespace verify_detail {

inline DenseBlock random_block(Index rows, Index cols, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  DenseBlock m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = u(gen);
  return m;
}

inline double rel_err(const DenseBlock& got, const DenseBlock& want) {
  const double d = want.norm();
  return d == 0.0 ? got.norm() : (got - want).norm() / d;
}

inline DenseBlock reference_r(const DenseBlock& x) {
  const Index n = x.cols();
  DenseBlock r = Eigen::HouseholderQR<DenseBlock>(x).matrixQR().topRows(n)
                     .triangularView<Eigen::Upper>();
  for (Index k = 0; k < n; ++k)
    if (r(k, k) < 0) r.row(k) *= -1.0;
  return r;
}

inline double subspace_sine(const DenseBlock& x, const DenseBlock& y) {
  const DenseBlock qx = Eigen::HouseholderQR<DenseBlock>(x).householderQ() *
                        DenseBlock::Identity(x.rows(), x.cols());
  const DenseBlock qy = Eigen::HouseholderQR<DenseBlock>(y).householderQ() *
                        DenseBlock::Identity(y.rows(), y.cols());
  return Eigen::JacobiSVD<DenseBlock>(qy - qx * (qx.transpose() * qy)).singularValues()(0);
}

// Records one check; exceptions count as a failure with their message.
inline void check(VerifyReport& rep, const std::string& name, double tol,
                  const std::function<double(std::string&)>& body) {
  PropertyCheck c{name, false, 0.0, tol, {}};
  try {
    c.value = body(c.detail);
    c.passed = std::isfinite(c.value) && c.value <= tol;
  } catch (const std::exception& e) {
    c.value = std::numeric_limits<double>::infinity();
    c.detail = e.what();
  }
  rep.checks.push_back(std::move(c));
}

// Gathers a V-layout result computed independently on each rank.
template <class Body>
DenseBlock gather_rows(int p, Index n, Index cols, Body&& body) {
  const GridTopology g(p);
  DenseBlock out = DenseBlock::Zero(n, cols);
  std::mutex mu;
  run_ranks(p, [&](Rank& r) {
    const DistDense1D d = body(r, g);
    std::lock_guard lk(mu);
    out.middleRows(d.row_begin(), d.local.rows()) = d.local;
  });
  return out;
}

}  // namespace verify_detail

/// Runs every property on instances drawn from opt.seed. Order matters: the
/// report's first failure is the one the CLI names.
inline VerifyReport run_verify(const VerifyOptions& opt = {}) {
  using namespace verify_detail;
  VerifyReport rep;
  std::mt19937_64 gen(opt.seed);
  const int p = opt.p;
  (void)GridTopology(p);  // rejects non-square p up front

  check(rep, "graph.laplacian_spectrum", 1e-12, [&](std::string& d) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Index n = 40;
    std::vector<std::pair<Index, Index>> e;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j)
        if (u(gen) < 0.06) e.emplace_back(i, j);
    const EdgeList g = make_edge_list(n, std::move(e));
    const Eigen::VectorXd ev =
        Eigen::SelfAdjointEigenSolver<DenseBlock>(normalized_laplacian(g).to_dense()).eigenvalues();
    Index zeros = 0, isolated = 0;
    for (Index i = 0; i < n; ++i) zeros += std::abs(ev(i)) < 1e-9;
    for (Index dg : degrees(g)) isolated += dg == 0;
    // Isolated nodes carry eigenvalue 1 (identity row), not 0.
    const Index comps = connected_components(g) - isolated;
    if (zeros != comps) {
      d = "zero multiplicity " + std::to_string(zeros) + " vs " + std::to_string(comps) +
          " non-trivial components";
      return 1.0;
    }
    return std::max({0.0, -ev.minCoeff(), ev.maxCoeff() - 2.0});
  });

  const SbmGraph sbm = gen_sbm(120, 4, 0.3, 0.02, opt.seed);
  const CsrMatrix lap = normalized_laplacian(sbm.graph);
  const DenseBlock lap_dense = lap.to_dense();
  const Eigen::SelfAdjointEigenSolver<DenseBlock> dense_eig(lap_dense);

  check(rep, "spmm.serial_oracle", 1e-13, [&](std::string&) {
    const DenseBlock x = random_block(120, 5, gen);
    return rel_err(spmm_serial(lap, x), lap_dense * x);
  });

  check(rep, "filter.dense_oracle", 1e-10, [&](std::string&) {
    const DenseBlock x = random_block(120, 4, gen);
    const FilterBounds fb = default_bounds(4, 120);
    Eigen::VectorXd phi(120);
    for (Index i = 0; i < 120; ++i) phi(i) = filter_response(fb, 11, dense_eig.eigenvalues()(i));
    const DenseBlock want = dense_eig.eigenvectors() * phi.asDiagonal() *
                            (dense_eig.eigenvectors().transpose() * x);
    return rel_err(chebyshev_filter(lap, x, fb, 11), want);
  });

  check(rep, "eigs.dense_oracle", 1e-7, [&](std::string& d) {
    SolverConfig cfg;
    cfg.k_want = 4;
    cfg.k_b = 2;
    cfg.seed = opt.seed;
    const EigResult r = bchdav_solve(lap, cfg);
    if (!r.converged) {
      d = "did not converge";
      return 1.0;
    }
    return (r.values - dense_eig.eigenvalues().head(4)).cwiseAbs().maxCoeff();
  });

  check(rep, "dist_operator.layout", 1e-13, [&](std::string&) {
    const DenseBlock x = random_block(120, 3, gen);
    const DenseBlock got = gather_rows(p, 120, 3, [&](Rank& r, const GridTopology& g) {
      const DistSparse2D at = distribute_sparse(r.id(), lap, g);
      const DistSparse2D it = distribute_identity(r.id(), 120, g.transposed());
      const DistOperator op{&at, &it, opt.faults};
      const DistDense1D v = distribute_dense(r.id(), x, g, Layout::v);
      DistDense1D y = v;
      op.apply_local(r, v.local, y.local);
      return y;
    });
    return rel_err(got, spmm_serial(lap, x));
  });

  check(rep, "dist_filter.equivalence", 1e-12, [&](std::string&) {
    const DenseBlock x = random_block(120, 3, gen);
    const FilterBounds fb = default_bounds(4, 120);
    const DenseBlock got = gather_rows(p, 120, 3, [&](Rank& r, const GridTopology& g) {
      const DistSparse2D at = distribute_sparse(r.id(), lap, g);
      const DistSparse2D it = distribute_identity(r.id(), 120, g.transposed());
      return dist_chebyshev_filter(r, at, it, distribute_dense(r.id(), x, g, Layout::v), fb, 5,
                                   opt.faults);
    });
    return rel_err(got, chebyshev_filter(lap, x, fb, 5));
  });

  TsqrOptions topt;
  topt.flip_r_sign = opt.faults.flip_r_sign;

  check(rep, "tsqr.r_sign_convention", 1e-12, [&](std::string&) {
    const DenseBlock x = random_block(64, 6, gen);
    const EvenSplit split{64, p};
    DenseBlock r0;
    run_ranks(p, [&](Rank& r) {
      const TsqrTree t =
          tsqr_factor(r.world(), x.middleRows(split.begin(r.id()), split.size(r.id())), topt);
      if (r.id() == 0) r0 = t.r;
    });
    return rel_err(r0, reference_r(x));
  });

  check(rep, "tsqr.orthogonality", 1e-12, [&](std::string&) {
    const DenseBlock x = random_block(64, 6, gen);
    const EvenSplit split{64, p};
    DenseBlock q(64, 6), r0;
    std::mutex mu;
    run_ranks(p, [&](Rank& r) {
      const ThinQr f =
          tsqr(r.world(), x.middleRows(split.begin(r.id()), split.size(r.id())), topt);
      std::lock_guard lk(mu);
      q.middleRows(split.begin(r.id()), split.size(r.id())) = f.q;
      if (r.id() == 0) r0 = f.r;
    });
    const double gram = (q.transpose() * q - DenseBlock::Identity(6, 6)).norm();
    return std::max(gram, rel_err(q * r0, x));
  });

  check(rep, "dist_eigs.cross_mode", 1e-9, [&](std::string& d) {
    SolverConfig cfg;
    cfg.k_want = 4;
    cfg.k_b = 2;
    cfg.seed = opt.seed;
    cfg.ortho = OrthoMethod::block_cgs_qr;
    const EigResult seq = bchdav_solve(lap, cfg);
    DistSolveOptions dopt;
    dopt.faults = opt.faults;
    dopt.tsqr = topt;
    const DistRunResult dist = dist_bchdav_run(lap, cfg, p, std::nullopt, std::nullopt, dopt);
    if (!seq.converged || !dist.result.converged) {
      d = "did not converge";
      return 1.0;
    }
    const double sine = subspace_sine(dist.result.vectors, seq.vectors);
    std::ostringstream os;
    os << "subspace sine " << sine;
    d = os.str();
    if (sine > 1e-6) return 1.0;
    return (dist.result.values - seq.values).cwiseAbs().maxCoeff();
  });

  return rep;
}

}  // namespace chebspectral

#endif  // CHEBSPECTRAL_VERIFY_HPP
