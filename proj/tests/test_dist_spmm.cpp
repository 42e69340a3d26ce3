#include "oracles.hpp"

#include <chebspectral/dist_spmm.hpp>
#include <chebspectral/graph.hpp>

#include <gtest/gtest.h>

#include <mutex>
#include <random>

using namespace chebspectral;

namespace {

/// Runs `body(rank, A tile, identity tile on the transposed grid)` on p ranks.
template <class F>
std::vector<CostCounters> on_grid(const CsrMatrix& a, int p, F&& body) {
  const GridTopology g(p);
  return run_ranks(p, [&](Rank& r) {
    const DistSparse2D at = distribute_sparse(r.id(), a, g);
    const DistSparse2D it = distribute_identity(r.id(), a.rows(), g.transposed());
    body(r, at, it);
  });
}

}  // namespace

TEST(Distribute, RoundTripIsIdentity) {
  std::mt19937_64 gen(1);
  for (int p : {1, 4, 9}) {
    const DenseBlock x = oracle::random_dense(20, 3, gen);
    const GridTopology g(p);
    run_ranks(p, [&](Rank& r) {
      for (Layout l : {Layout::v, Layout::u}) {
        const DistDense1D d = distribute_dense(r.id(), x, g, l);
        EXPECT_EQ(collect_dense(r, d), x);
      }
    });
  }
}

TEST(Distribute, NineRankOwnership) {
  // P(2,1) is rank 1*3 + 2 = 5 and owns U[7], V[5] and the tile A[2,1].
  const GridTopology g(9);
  EXPECT_EQ(DistDense1D::block_of(g, Layout::v, 5), 5);
  EXPECT_EQ(DistDense1D::block_of(g, Layout::u, 5), 7);
  std::mt19937_64 gen(2);
  const CsrMatrix a = oracle::random_sparse_symmetric(18, 0.3, gen);
  const DistSparse2D t = distribute_sparse(5, a, g);
  // 18 rows, 9 fine blocks of 2, coarse blocks of 6.
  EXPECT_EQ(t.row_begin, 12);
  EXPECT_EQ(t.row_end, 18);
  EXPECT_EQ(t.col_begin, 6);
  EXPECT_EQ(t.col_end, 12);
  EXPECT_EQ(t.tile.to_dense(), a.to_dense().block(12, 6, 6, 6));
}

TEST(Distribute, TilesCoverMatrixExactly) {
  std::mt19937_64 gen(3);
  const CsrMatrix a = oracle::random_sparse_symmetric(23, 0.2, gen);
  for (int p : {1, 4, 9, 16}) {
    const GridTopology g(p);
    DenseBlock acc = DenseBlock::Zero(23, 23);
    Index nnz = 0;
    for (int r = 0; r < p; ++r) {
      const DistSparse2D t = distribute_sparse(r, a, g);
      acc.block(t.row_begin, t.col_begin, t.row_end - t.row_begin, t.col_end - t.col_begin) +=
          t.tile.to_dense();
      nnz += t.tile.nnz();
    }
    EXPECT_EQ(acc, a.to_dense());
    EXPECT_EQ(nnz, a.nnz());
  }
}

TEST(Distribute, TransposedTilesMatchTransposedGrid) {
  std::mt19937_64 gen(4);
  const CsrMatrix a = oracle::random_sparse_symmetric(19, 0.3, gen);
  const GridTopology g(9);
  for (int r = 0; r < 9; ++r) {
    const DistSparse2D t = distribute_sparse(r, a, g).transposed();
    const DistSparse2D want = distribute_sparse(r, a, g.transposed());
    EXPECT_EQ(t.tile, want.tile);
    EXPECT_EQ(t.row_begin, want.row_begin);
    EXPECT_EQ(t.col_begin, want.col_begin);
    EXPECT_EQ(t.grid, want.grid);
  }
}

TEST(Spmm15d, SingleRankEqualsSerialBitExact) {
  std::mt19937_64 gen(5);
  const CsrMatrix a = oracle::random_sparse_symmetric(30, 0.2, gen);
  const DenseBlock v = oracle::random_dense(30, 4, gen);
  on_grid(a, 1, [&](Rank& r, const DistSparse2D& at, const DistSparse2D&) {
    const DistDense1D u = spmm_15d(r, at, distribute_dense(r.id(), v, at.grid, Layout::v));
    EXPECT_EQ(u.local, spmm_serial(a, v));
  });
}

TEST(Spmm15d, NineRanksMatchSerial) {
  std::mt19937_64 gen(6);
  const CsrMatrix a = oracle::random_sparse_symmetric(18, 0.3, gen);
  const DenseBlock v = oracle::random_dense(18, 2, gen);
  const DenseBlock want = spmm_serial(a, v);
  on_grid(a, 9, [&](Rank& r, const DistSparse2D& at, const DistSparse2D&) {
    const DistDense1D u = spmm_15d(r, at, distribute_dense(r.id(), v, at.grid, Layout::v));
    EXPECT_EQ(u.layout, Layout::u);
    EXPECT_LE(oracle::rel_fro(collect_dense(r, u), want), 1e-13);
  });
}

TEST(Spmm15d, RandomizedEquivalence) {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<int> pick_p(0, 3), pick_n(1, 60), pick_k(1, 5);
  const int ps[] = {1, 4, 9, 16};
  for (int trial = 0; trial < 40; ++trial) {
    const int p = ps[pick_p(gen)];
    const Index n = pick_n(gen), k = pick_k(gen);
    const CsrMatrix a = oracle::random_sparse_symmetric(n, 0.15, gen);
    const DenseBlock v = oracle::random_dense(n, k, gen);
    const DenseBlock want = spmm_serial(a, v);
    on_grid(a, p, [&](Rank& r, const DistSparse2D& at, const DistSparse2D&) {
      const DenseBlock got =
          collect_dense(r, spmm_15d(r, at, distribute_dense(r.id(), v, at.grid, Layout::v)));
      EXPECT_LE(oracle::rel_fro(got, want), 1e-13) << "p=" << p << " n=" << n << " k=" << k;
    });
  }
}

TEST(Spmm15d, IdentityPermutesBlocksWithoutFlops) {
  std::mt19937_64 gen(8);
  const DenseBlock v = oracle::random_dense(12, 3, gen);
  const GridTopology g(4);
  const auto ctr = run_ranks(4, [&](Rank& r) {
    const DistSparse2D id = distribute_identity(r.id(), 12, g);
    const DistDense1D in = distribute_dense(r.id(), v, g, Layout::v);
    const DistDense1D out = spmm_15d(r, id, in);
    EXPECT_EQ(out.layout, Layout::u);
    // Same global rows, now owned per U-layout.
    EXPECT_EQ(out.local, distribute_dense(r.id(), v, g, Layout::u).local);
  });
  for (const auto& c : ctr) EXPECT_EQ(c.flops, 0u);
}

TEST(Spmm15d, RejectsWrongLayout) {
  std::mt19937_64 gen(9);
  const CsrMatrix a = oracle::random_sparse_symmetric(8, 0.4, gen);
  const DenseBlock v = oracle::random_dense(8, 2, gen);
  EXPECT_THROW(on_grid(a, 4,
                       [&](Rank& r, const DistSparse2D& at, const DistSparse2D&) {
                         spmm_15d(r, at, distribute_dense(r.id(), v, at.grid, Layout::u));
                       }),
               LayoutError);
}

TEST(Spmm15d, ChargedWordsHalveWhenPQuadruples) {
  std::mt19937_64 gen(10);
  const CsrMatrix a = oracle::random_sparse_symmetric(64, 0.1, gen);
  const DenseBlock v = oracle::random_dense(64, 4, gen);
  std::uint64_t words[2];
  int idx = 0;
  for (int p : {4, 16}) {
    const auto ctr = on_grid(a, p, [&](Rank& r, const DistSparse2D& at, const DistSparse2D&) {
      spmm_15d(r, at, distribute_dense(r.id(), v, at.grid, Layout::v));
    });
    const CostCounters m = max_over_ranks(ctr);
    const int q = GridTopology(p).q();
    EXPECT_EQ(m.words, 2u * 64u * 4u / static_cast<std::uint64_t>(q));
    EXPECT_EQ(m.words, spmm_15d_charge(64, q, 4).words);
    EXPECT_EQ(m.messages, spmm_15d_charge(64, q, 4).messages);
    words[idx++] = m.words;
  }
  EXPECT_EQ(words[1] * 2, words[0]);
}

TEST(Redistribute, SingleRankNoOp) {
  std::mt19937_64 gen(11);
  const DenseBlock v = oracle::random_dense(7, 2, gen);
  const GridTopology g(1);
  run_ranks(1, [&](Rank& r) {
    const DistSparse2D it = distribute_identity(0, 7, g.transposed());
    DistDense1D u = distribute_dense(0, v, g, Layout::u);
    const DistDense1D w = redistribute_u_to_v(r, it, u);
    EXPECT_EQ(w.layout, Layout::v);
    EXPECT_EQ(w.local, v);
  });
}

TEST(Redistribute, PreservesValuesAndFixesLayout) {
  std::mt19937_64 gen(12);
  for (int p : {4, 9, 16}) {
    const DenseBlock v = oracle::random_dense(29, 3, gen);
    const GridTopology g(p);
    run_ranks(p, [&](Rank& r) {
      const DistSparse2D it = distribute_identity(r.id(), 29, g.transposed());
      const DistDense1D u = distribute_dense(r.id(), v, g, Layout::u);
      const DistDense1D w = redistribute_u_to_v(r, it, u);
      EXPECT_EQ(w.layout, Layout::v);
      EXPECT_EQ(w.grid, g);
      EXPECT_EQ(w.local, distribute_dense(r.id(), v, g, Layout::v).local);
      EXPECT_EQ(collect_dense(r, w), collect_dense(r, u));
      EXPECT_THROW(redistribute_u_to_v(r, it, w), LayoutError);
    });
  }
}

TEST(Redistribute, SpmmComposition) {
  std::mt19937_64 gen(13);
  const CsrMatrix a = oracle::random_sparse_symmetric(40, 0.15, gen);
  const DenseBlock v = oracle::random_dense(40, 3, gen);
  const DenseBlock want = a.to_dense() * (a.to_dense() * v);
  on_grid(a, 9, [&](Rank& r, const DistSparse2D& at, const DistSparse2D& it) {
    const DistDense1D x = distribute_dense(r.id(), v, at.grid, Layout::v);
    const DistDense1D y = redistribute_u_to_v(r, it, spmm_15d(r, at, x));
    EXPECT_LE(oracle::rel_fro(collect_dense(r, spmm_15d(r, at, y)), want), 1e-13);
    // Skipping the redistribution is a layout error on the second product.
    EXPECT_THROW(spmm_15d(r, at, spmm_15d(r, at, x)), LayoutError);
  });
}

TEST(LayoutTags, MismatchedCombineRejected) {
  const GridTopology g(4);
  run_ranks(4, [&](Rank& r) {
    const DenseBlock v = DenseBlock::Ones(8, 1);
    const DistDense1D x = distribute_dense(r.id(), v, g, Layout::v);
    const DistDense1D u = distribute_dense(r.id(), v, g, Layout::u);
    EXPECT_THROW(require_same_layout(x, u, "test"), LayoutError);
    EXPECT_NO_THROW(require_same_layout(x, x.on_grid(g.transposed()).on_grid(g), "test"));
    EXPECT_THROW(require_same_layout(u, x.on_grid(g.transposed()), "test"), LayoutError);
    EXPECT_NO_THROW(require_same_layout(u, u.on_grid(g.transposed()), "test"));
  });
}

TEST(DistFilter, SingleRankBitExact) {
  std::mt19937_64 gen(14);
  const CsrMatrix a = normalized_laplacian(oracle::random_graph(25, 0.2, gen));
  const DenseBlock v = oracle::random_dense(25, 3, gen);
  const FilterBounds fb{0.0, 2.0, 0.4};
  on_grid(a, 1, [&](Rank& r, const DistSparse2D& at, const DistSparse2D& it) {
    const DistDense1D out =
        dist_chebyshev_filter(r, at, it, distribute_dense(0, v, at.grid, Layout::v), fb, 7);
    EXPECT_EQ(out.local, chebyshev_filter(a, v, fb, 7));
  });
}

TEST(DistFilter, MatchesSequentialFilter) {
  std::mt19937_64 gen(15);
  for (int p : {4, 9}) {
    const CsrMatrix a = normalized_laplacian(oracle::random_graph(18 * p / 3, 0.2, gen));
    const Index n = a.rows();
    const DenseBlock v = oracle::random_dense(n, 2, gen);
    const FilterBounds fb{0.0, 2.0, 0.3};
    for (int m : {2, 5, 11, 15}) {
      const DenseBlock want = chebyshev_filter(a, v, fb, m);
      on_grid(a, p, [&](Rank& r, const DistSparse2D& at, const DistSparse2D& it) {
        const DistDense1D out =
            dist_chebyshev_filter(r, at, it, distribute_dense(r.id(), v, at.grid, Layout::v), fb, m);
        EXPECT_EQ(out.layout, Layout::v);
        EXPECT_LE(oracle::rel_fro(collect_dense(r, out), want), 1e-12) << "p=" << p << " m=" << m;
      });
    }
  }
}

TEST(DistFilter, CollectiveCountClosedForm) {
  // Per degree: one A-SpMM and one identity SpMM, each an allgather plus a
  // reduce_scatter, so a degree-m filter issues 2m of each.
  std::mt19937_64 gen(16);
  const CsrMatrix a = normalized_laplacian(oracle::random_graph(18, 0.3, gen));
  const DenseBlock v = oracle::random_dense(18, 2, gen);
  const int m = 5;
  const auto ctr = on_grid(a, 9, [&](Rank& r, const DistSparse2D& at, const DistSparse2D& it) {
    PhaseScope ps(r, "filter");
    dist_chebyshev_filter(r, at, it, distribute_dense(r.id(), v, at.grid, Layout::v),
                          {0.0, 2.0, 0.5}, m);
  });
  for (const auto& c : ctr) {
    EXPECT_EQ(c.collective_total("allgather").count, 2u * m);
    EXPECT_EQ(c.collective_total("reduce_scatter").count, 2u * m);
    const auto total = c.phase_total("filter");
    EXPECT_EQ(total.messages, dist_filter_charge(18, 3, 2, m).messages);
    EXPECT_EQ(total.words, dist_filter_charge(18, 3, 2, m).words);
  }
}

TEST(DistFilter, SkippedRedistributionIsLayoutError) {
  std::mt19937_64 gen(17);
  const CsrMatrix a = normalized_laplacian(oracle::random_graph(20, 0.3, gen));
  const DenseBlock v = oracle::random_dense(20, 2, gen);
  DistFaults f;
  f.skip_redistribute = true;
  EXPECT_THROW(on_grid(a, 4,
                       [&](Rank& r, const DistSparse2D& at, const DistSparse2D& it) {
                         dist_chebyshev_filter(r, at, it,
                                               distribute_dense(r.id(), v, at.grid, Layout::v),
                                               {0.0, 2.0, 0.5}, 3, f);
                       }),
               LayoutError);
}

TEST(DistFilter, DegenerateBoundsRejected) {
  const CsrMatrix a = CsrMatrix::identity(4);
  EXPECT_THROW(on_grid(a, 1,
                       [&](Rank& r, const DistSparse2D& at, const DistSparse2D& it) {
                         dist_chebyshev_filter(
                             r, at, it, distribute_dense(0, DenseBlock::Ones(4, 1), at.grid, Layout::v),
                             {0.0, 2.0, 2.0}, 3);
                       }),
               std::invalid_argument);
}
