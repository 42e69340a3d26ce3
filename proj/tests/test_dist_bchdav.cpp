#include "oracles.hpp"

#include <chebspectral/dist_bchdav.hpp>
#include <chebspectral/graph.hpp>

#include <gtest/gtest.h>

#include <mutex>
#include <random>

using namespace chebspectral;

namespace {

CsrMatrix sbm(Index n, Index blocks, std::uint64_t seed) {
  return normalized_laplacian(gen_sbm(n, blocks, 0.3, 0.02, seed).graph);
}

SolverConfig base_config(Index k_want, Index k_b) {
  SolverConfig cfg;
  cfg.k_want = k_want;
  cfg.k_b = k_b;
  cfg.ortho = OrthoMethod::block_cgs_qr;
  return cfg;
}

}  // namespace

TEST(DistBchdav, SingleRankBitIdenticalToSequential) {
  const CsrMatrix a = sbm(120, 4, 1);
  const SolverConfig cfg = base_config(6, 3);
  const EigResult seq = bchdav_solve(a, cfg);
  for (auto mode : {Fabric::Mode::threaded, Fabric::Mode::lockstep}) {
    const DistRunResult d = dist_bchdav_run(a, cfg, 1, std::nullopt, std::nullopt, {}, {mode, 64});
    ASSERT_TRUE(d.result.converged);
    EXPECT_EQ(d.result.values, seq.values);
    EXPECT_EQ(d.result.vectors, seq.vectors);
    EXPECT_EQ(d.result.iterations, seq.iterations);
  }
}

TEST(DistBchdav, NineRanksMatchDenseOracle) {
  const CsrMatrix a = sbm(180, 8, 2);
  const auto eig = oracle::dense_eig(a);
  SolverConfig cfg = base_config(8, 4);
  const DistRunResult d = dist_bchdav_run(a, cfg, 9);
  ASSERT_TRUE(d.result.converged);
  for (Index j = 0; j < 8; ++j) EXPECT_NEAR(d.result.values(j), eig.values(j), 1e-7);
  const DenseBlock res = spmm_serial(a, d.result.vectors) -
                         d.result.vectors * d.result.values.asDiagonal();
  for (Index j = 0; j < 8; ++j) EXPECT_LE(res.col(j).norm(), 1e-8);
}

TEST(DistBchdav, CrossRankCountAgreement) {
  const CsrMatrix a = sbm(150, 5, 3);
  const SolverConfig cfg = base_config(5, 2);
  const EigResult seq = bchdav_solve(a, cfg);
  for (int p : {4, 9}) {
    DistSolveOptions opt;
    opt.check_replication = true;
    const DistRunResult d = dist_bchdav_run(a, cfg, p, std::nullopt, std::nullopt, opt,
                                            {Fabric::Mode::lockstep, 64});
    ASSERT_TRUE(d.result.converged) << p;
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(d.result.values(j), seq.values(j), 1e-9) << p;
    EXPECT_LE(oracle::max_principal_angle(d.result.vectors, seq.vectors), 1e-6) << p;
  }
}

TEST(DistBchdav, ReplicatedStateAndFilterCounts) {
  const CsrMatrix a = sbm(160, 4, 4);
  const SolverConfig cfg = base_config(4, 2).resolved(160);
  const GridTopology g(4);
  std::vector<std::vector<std::uint64_t>> hashes(4);
  std::vector<Index> iters(4);
  const auto ctr = run_ranks(4, [&](Rank& r) {
    const DistSparse2D at = distribute_sparse(r.id(), a, g);
    const DistSparse2D it = distribute_identity(r.id(), 160, g.transposed());
    const EigResult res = dist_bchdav_solve(
        r, at, it, cfg, nullptr, std::nullopt, {}, [&](const SolverState& st) {
          hashes[static_cast<std::size_t>(r.id())].push_back(replicated_state_hash(st));
        });
    iters[static_cast<std::size_t>(r.id())] = res.iterations;
  });
  for (int k = 1; k < 4; ++k) EXPECT_EQ(hashes[static_cast<std::size_t>(k)], hashes[0]);
  const auto per_filter = dist_filter_charge(160, 2, cfg.k_b, cfg.m);
  for (const auto& c : ctr) {
    const auto f = c.phase_total("filter");
    EXPECT_EQ(f.messages, static_cast<std::uint64_t>(iters[0]) * per_filter.messages);
    EXPECT_EQ(f.words, static_cast<std::uint64_t>(iters[0]) * per_filter.words);
    EXPECT_EQ(f.count, static_cast<std::uint64_t>(iters[0]) * 4u * static_cast<std::uint64_t>(cfg.m));
  }
}

TEST(DistBchdav, UpdateHMatchesSequential) {
  // One Rayleigh-Ritz step on p = 4 against the same step in one address space.
  const CsrMatrix a = sbm(64, 4, 5);
  SolverConfig cfg = base_config(4, 4).resolved(64);
  const FilterBounds fb = default_bounds(4, 64);
  SerialBackend sb(a, OrthoMethod::block_cgs_qr);
  SolverState ref = bchdav::init_state(sb, cfg, nullptr, fb);
  bchdav::expand_basis(sb, ref, cfg, fb);
  bchdav::rayleigh_ritz_update(sb, ref, cfg);
  const DenseBlock href = ref.H.topLeftCorner(ref.k_act, ref.k_act);

  const GridTopology g(4);
  std::mutex mu;
  run_ranks(4, [&](Rank& r) {
    const DistSparse2D at = distribute_sparse(r.id(), a, g);
    const DistSparse2D it = distribute_identity(r.id(), 64, g.transposed());
    DistBackend be(r, at, it);
    SolverState st = bchdav::init_state(be, cfg, nullptr, fb);
    bchdav::expand_basis(be, st, cfg, fb);
    bchdav::rayleigh_ritz_update(be, st, cfg);
    const DenseBlock h = st.H.topLeftCorner(st.k_act, st.k_act);
    std::lock_guard lk(mu);
    EXPECT_LE((h - href).norm(), 1e-13);
    EXPECT_EQ(h, h.transpose());
    // Local rows equal the matching rows of the sequential basis up to rounding.
    EXPECT_LE((st.V.leftCols(4) - ref.V.leftCols(4).middleRows(be.row_offset(), be.local_rows()))
                  .norm(),
              1e-12);
  });
}

TEST(DistBchdav, ResidualOfExactEigenvectors) {
  const CsrMatrix a = sbm(80, 4, 6);
  const auto eig = oracle::dense_eig(a);
  SolverConfig cfg = base_config(2, 2).resolved(80);
  const GridTopology g(4);
  run_ranks(4, [&](Rank& r) {
    const DistSparse2D at = distribute_sparse(r.id(), a, g);
    const DistSparse2D it = distribute_identity(r.id(), 80, g.transposed());
    DistBackend be(r, at, it);
    SolverState st = bchdav::init_state(be, cfg, nullptr, default_bounds(2, 80));
    const DistDense1D vecs = distribute_dense(r.id(), DenseBlock(eig.vectors.leftCols(4)), g,
                                              Layout::v);
    st.V.leftCols(4) = vecs.local;
    st.k_act = st.k_sub = 4;
    st.ritz = eig.values.head(4);
    const Index ec = bchdav::residual_deflate(be, st, cfg, 1e-10);
    EXPECT_EQ(ec, 2);
    EXPECT_EQ(st.k_c, 2);
    EXPECT_NEAR(st.eval[0], eig.values(0), 1e-14);
  });
}

TEST(DistBchdav, SkippedRedistributionFailsLoudly) {
  const CsrMatrix a = sbm(64, 4, 7);
  DistSolveOptions opt;
  opt.faults.skip_redistribute = true;
  EXPECT_THROW(dist_bchdav_run(a, base_config(4, 2), 4, std::nullopt, std::nullopt, opt),
               LayoutError);
}

TEST(DistBchdav, RejectsNonSquareGrid) {
  EXPECT_THROW(dist_bchdav_run(sbm(60, 3, 8), base_config(3, 1), 8), std::invalid_argument);
}

TEST(DistBchdav, InitialVectorsDistributed) {
  const CsrMatrix a = sbm(100, 4, 9);
  const auto eig = oracle::dense_eig(a);
  const DistRunResult d =
      dist_bchdav_run(a, base_config(4, 4), 4, DenseBlock(eig.vectors.leftCols(4)));
  ASSERT_TRUE(d.result.converged);
  EXPECT_LE(d.result.iterations, 2);
  for (Index j = 0; j < 4; ++j) EXPECT_NEAR(d.result.values(j), eig.values(j), 1e-10);
}
