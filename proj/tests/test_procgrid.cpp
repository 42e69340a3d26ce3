#include <chebspectral/procgrid.hpp>

#include <gtest/gtest.h>

#include <atomic>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

using namespace chebspectral;

namespace {

constexpr Fabric::Mode kModes[] = {Fabric::Mode::threaded, Fabric::Mode::lockstep};

Payload random_payload(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Payload x(n);
  for (auto& v : x) v = u(gen);
  return x;
}

}  // namespace

TEST(Transport, OrderedPerPair) {
  for (auto mode : kModes) {
    std::vector<double> got;
    run_ranks(
        2,
        [&](Rank& r) {
          if (r.id() == 0)
            for (int k = 0; k < 100; ++k) r.send(1, 7, {static_cast<double>(k)});
          else
            for (int k = 0; k < 100; ++k) got.push_back(r.recv(0, 7).at(0));
        },
        {mode, 4});
    ASSERT_EQ(got.size(), 100u);
    for (int k = 0; k < 100; ++k) EXPECT_EQ(got[static_cast<std::size_t>(k)], k);
  }
}

TEST(Transport, DeadlockDetected) {
  for (auto mode : kModes) {
    EXPECT_THROW(run_ranks(
                     3, [](Rank& r) { r.recv((r.id() + 1) % 3, 1); }, {mode, 4}),
                 DeadlockError);
  }
}

TEST(Transport, DeadlockOnFullChannels) {
  for (auto mode : kModes) {
    // Both ranks send more than the capacity before receiving anything.
    EXPECT_THROW(run_ranks(
                     2,
                     [](Rank& r) {
                       for (int k = 0; k < 5; ++k) r.send(1 - r.id(), 1, {1.0});
                       r.recv(1 - r.id(), 1);
                     },
                     {mode, 2}),
                 DeadlockError);
  }
}

TEST(Transport, WaitingOnFinishedRankIsDeadlock) {
  EXPECT_THROW(run_ranks(2, [](Rank& r) {
                 if (r.id() == 1) r.recv(0, 1);
               }),
               DeadlockError);
}

TEST(Transport, ExceptionPropagates) {
  for (auto mode : kModes) {
    EXPECT_THROW(run_ranks(
                     4,
                     [](Rank& r) {
                       if (r.id() == 2) throw std::domain_error("boom");
                       r.recv((r.id() + 1) % 4, 1);
                     },
                     {mode, 4}),
                 std::domain_error);
  }
}

TEST(Transport, TagMismatchIsCollectiveMismatch) {
  EXPECT_THROW(run_ranks(2,
                         [](Rank& r) {
                           if (r.id() == 0) allgather(r.world(), {1.0});
                           else allreduce(r.world(), {1.0});
                         }),
               CommError);
}

TEST(Transport, LockstepRunsOneRankAtATime) {
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
  run_ranks(
      4,
      [&](Rank& r) {
        for (int round = 0; round < 3; ++round) {
          const int now = ++active;
          peak = std::max(peak.load(), now);
          std::this_thread::sleep_for(std::chrono::microseconds(200));
          --active;
          allreduce(r.world(), {1.0});
        }
      },
      {Fabric::Mode::lockstep, 64});
  EXPECT_EQ(peak.load(), 1);
}

TEST(Allgather, SingleRankIsIdentity) {
  run_ranks(1, [](Rank& r) {
    EXPECT_EQ(allgather(r.world(), {3.0, 4.0}), (Payload{3.0, 4.0}));
    EXPECT_EQ(r.counters().messages, 0u);
    EXPECT_EQ(r.counters().words, 0u);
  });
}

TEST(Allgather, ConcatenatesInRankOrder) {
  for (int p : {2, 3, 4, 5, 7, 8, 9, 16}) {
    for (auto mode : kModes) {
      const auto ctr = run_ranks(
          p,
          [&](Rank& r) {
            const Payload got = allgather(r.world(), {10.0 * r.id(), 10.0 * r.id() + 1});
            Payload want;
            for (int k = 0; k < p; ++k) {
              want.push_back(10.0 * k);
              want.push_back(10.0 * k + 1);
            }
            EXPECT_EQ(got, want) << "p=" << p;
          },
          {mode, 64});
      for (const auto& c : ctr) {
        EXPECT_EQ(c.messages, static_cast<std::uint64_t>(ceil_log2(p)));
        EXPECT_EQ(c.words, static_cast<std::uint64_t>(2 * p));
      }
    }
  }
}

TEST(Allgather, FourRankCharges) {
  const auto ctr = run_ranks(4, [](Rank& r) {
    const Payload got = allgather(r.world(), {static_cast<double>(r.id())});
    EXPECT_EQ(got, (Payload{0, 1, 2, 3}));
    allgather(r.world(), Payload(5, 1.0));
  });
  for (const auto& c : ctr) {
    const auto ag = c.collective_total("allgather");
    EXPECT_EQ(ag.count, 2u);
    EXPECT_EQ(ag.messages, 4u);
    EXPECT_EQ(ag.words, 4u * 1 + 4u * 5);
  }
}

TEST(Allgather, SizeMismatchThrows) {
  EXPECT_THROW(run_ranks(4,
                         [](Rank& r) {
                           allgather(r.world(), Payload(r.id() == 3 ? 2 : 1, 0.0));
                         }),
               CommError);
}

TEST(ReduceScatter, TwoRankHandSum) {
  run_ranks(2, [](Rank& r) {
    const Payload in = r.id() == 0 ? Payload{1, 2} : Payload{3, 4};
    const Payload got = reduce_scatter(r.world(), in);
    EXPECT_EQ(got, (Payload{r.id() == 0 ? 4.0 : 6.0}));
  });
}

TEST(ReduceScatter, SingleRankUnchanged) {
  run_ranks(1, [](Rank& r) {
    EXPECT_EQ(reduce_scatter(r.world(), {1, 2, 3}), (Payload{1, 2, 3}));
  });
}

TEST(ReduceScatter, MatchesTreeSumExactly) {
  for (int p : {3, 4, 6}) {
    const std::size_t len = 11;  // not divisible by p: padded
    std::vector<Payload> parts;
    for (int k = 0; k < p; ++k) parts.push_back(random_payload(len, 100 + k));
    const Payload total = tree_sum(parts);
    Payload serial(len, 0.0);
    for (const auto& x : parts)
      for (std::size_t i = 0; i < len; ++i) serial[i] += x[i];
    const std::size_t slice = (len + p - 1) / p;
    run_ranks(p, [&](Rank& r) {
      const Payload got = reduce_scatter(r.world(), parts[static_cast<std::size_t>(r.id())]);
      const std::size_t b = slice * static_cast<std::size_t>(r.id());
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i], total[b + i]);
        EXPECT_NEAR(got[i], serial[b + i], 1e-13);
      }
      EXPECT_EQ(got.size(), b >= len ? 0 : std::min(slice, len - b));
      EXPECT_EQ(r.counters().words, slice * static_cast<std::size_t>(p));
    });
  }
}

TEST(ReduceScatterV, UnevenCounts) {
  run_ranks(3, [](Rank& r) {
    const Payload in{1.0 * (r.id() + 1), 2, 3, 4, 5, 6};
    const Payload got = reduce_scatter_v(r.world(), in, {1, 3, 2});
    const std::vector<Payload> want{{6}, {6, 9, 12}, {15, 18}};
    EXPECT_EQ(got, want[static_cast<std::size_t>(r.id())]);
    // Charged as the padded uniform payload: 3 members x 3 words.
    EXPECT_EQ(r.counters().words, 9u);
    EXPECT_EQ(r.counters().messages, 2u);
  });
}

TEST(Allreduce, TwoRankScalar) {
  run_ranks(2, [](Rank& r) { EXPECT_EQ(allreduce(r.world(), {r.id() + 1.5}), (Payload{4.0})); });
}

TEST(Allreduce, NineRanksBitIdenticalAndTreeOrdered) {
  std::vector<Payload> parts;
  for (int k = 0; k < 9; ++k) parts.push_back(random_payload(17, 7 + k));
  const Payload total = tree_sum(parts);
  std::vector<Payload> got(9);
  for (auto mode : kModes) {
    const auto ctr = run_ranks(
        9,
        [&](Rank& r) {
          got[static_cast<std::size_t>(r.id())] =
              allreduce(r.world(), parts[static_cast<std::size_t>(r.id())]);
        },
        {mode, 64});
    for (const auto& g : got) EXPECT_EQ(g, total);
    for (const auto& c : ctr) {
      EXPECT_EQ(c.messages, 2u * 4u);
      EXPECT_EQ(c.words, 2u * 4u * 17u);
    }
  }
  Payload serial(17, 0.0);
  for (const auto& x : parts)
    for (std::size_t i = 0; i < 17; ++i) serial[i] += x[i];
  for (std::size_t i = 0; i < 17; ++i) EXPECT_NEAR(total[i], serial[i], 1e-13);
}

TEST(BcastReduce, Semantics) {
  for (int root : {0, 2, 3}) {
    run_ranks(4, [&](Rank& r) {
      const Payload got = bcast(r.world(), root, r.id() == root ? Payload{5, 6} : Payload{0, 0});
      EXPECT_EQ(got, (Payload{5, 6}));
      const Payload red = reduce(r.world(), root, {1.0 * r.id(), 1.0});
      if (r.id() == root) {
        EXPECT_EQ(red, (Payload{6.0, 4.0}));
      }
      EXPECT_EQ(r.counters().messages, 4u);
      EXPECT_EQ(r.counters().words, 2u * 2u + 2u * 2u);
    });
  }
  run_ranks(1, [](Rank& r) {
    EXPECT_EQ(bcast(r.world(), 0, {1.0}), (Payload{1.0}));
    EXPECT_EQ(r.counters().messages, 0u);
  });
  EXPECT_THROW(run_ranks(2, [](Rank& r) { bcast(r.world(), 2, {1.0}); }), CommError);
}

TEST(Counters, KAllgathersClosedForm) {
  for (int p : {1, 4, 16}) {
    const auto ctr = run_ranks(p, [](Rank& r) {
      for (int k = 0; k < 5; ++k) allgather(r.world(), Payload(3, 0.0));
    });
    const CostCounters m = max_over_ranks(ctr);
    EXPECT_EQ(m.messages, 5u * static_cast<std::uint64_t>(ceil_log2(p)));
    EXPECT_EQ(m.words, p == 1 ? 0u : 5u * 3u * static_cast<std::uint64_t>(p));
    EXPECT_EQ(m.collective_total("allgather").count, 5u);
  }
}

TEST(Counters, CsvAndPhases) {
  const auto ctr = run_ranks(4, [](Rank& r) {
    {
      PhaseScope ps(r, "filter");
      allgather(r.world(), {1.0});
    }
    allreduce(r.world(), {1.0});
    r.counters().add_flops("filter", 10);
  });
  const CostCounters& c = ctr[0];
  EXPECT_EQ(c.phase_total("filter").count, 1u);
  EXPECT_EQ(c.phase_total("other").count, 1u);
  EXPECT_EQ(c.flops_by_phase.at("filter"), 10u);
  std::ostringstream os;
  c.write_csv(os);
  EXPECT_EQ(os.str(),
            "collective,count,messages,words\nallgather,1,2,4\nallreduce,1,4,4\n");
}

TEST(GridTopology, Basics) {
  EXPECT_THROW(GridTopology(8), std::invalid_argument);
  EXPECT_THROW(GridTopology(0), std::invalid_argument);
  const GridTopology g1(1);
  EXPECT_EQ(g1.rank_of(0, 0), 0);
  EXPECT_EQ(g1.transposed().rank_of(0, 0), 0);

  const GridTopology g(9);
  EXPECT_EQ(g.q(), 3);
  EXPECT_EQ(g.rank_of(2, 1), 5);  // P(2,1) is P(1*3 + 2)
  EXPECT_EQ(g.transposed().rank_of(1, 2), 5);
  EXPECT_THROW(g.rank_of(3, 0), std::out_of_range);
  EXPECT_EQ(GridTopology(4).row_members(0), (std::vector<int>{0, 2}));
  EXPECT_EQ(g.col_members(1), (std::vector<int>{3, 4, 5}));
}

TEST(GridTopology, TransposeIsInvolution) {
  const GridTopology g(16);
  EXPECT_EQ(transpose_grid(transpose_grid(g)), g);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      EXPECT_EQ(g.transposed().rank_of(i, j), g.rank_of(j, i));
      EXPECT_EQ(g.transposed().transposed().rank_of(i, j), g.rank_of(i, j));
    }
  for (int r = 0; r < 16; ++r) {
    const auto [i, j] = g.coords(r);
    EXPECT_EQ(g.rank_of(i, j), r);
  }
}

TEST(GridTopology, RowsPartitionTheRanks) {
  const GridTopology g(9);
  std::set<int> all;
  for (int i = 0; i < 3; ++i)
    for (int r : g.row_members(i)) EXPECT_TRUE(all.insert(r).second);
  EXPECT_EQ(all.size(), 9u);
}

TEST(GridTopology, RowAndColumnCommunicators) {
  const GridTopology g(9);
  std::mutex mu;
  run_ranks(9, [&](Rank& r) {
    const auto [i, j] = g.coords(r.id());
    const Comm rc = row_comm(r, g);
    const Comm cc = col_comm(r, g);
    std::lock_guard lk(mu);
    EXPECT_EQ(rc.members(), g.row_members(i));
    EXPECT_EQ(cc.members(), g.col_members(j));
    EXPECT_EQ(rc.index(), j);
    EXPECT_EQ(cc.index(), i);
  });
  // Row sums then column sums equal the whole-grid sum.
  run_ranks(9, [&](Rank& r) {
    DenseBlock m = DenseBlock::Constant(2, 2, r.id());
    grid_allreduce(r, g, m);
    EXPECT_EQ(m, DenseBlock::Constant(2, 2, 36.0));
  });
}
