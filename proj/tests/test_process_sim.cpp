#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "bsrlab/process_sim.hpp"

using namespace bsrlab;

namespace {

RunConfig config_for(const RuleSpec& rule, std::uint64_t n, double t_max, std::uint64_t seed) {
  RunConfig c;
  c.n = n;
  c.rule = rule;
  c.t_max = t_max;
  c.seed = seed;
  return c;
}

// Adjacency-matrix reference: component labels by repeated BFS.
struct NaiveGraph {
  int n;
  std::vector<std::vector<bool>> adj;
  explicit NaiveGraph(int n_) : n(n_), adj(n_, std::vector<bool>(n_, false)) {}

  std::vector<int> labels() const {
    std::vector<int> label(n, -1);
    for (int s = 0; s < n; ++s) {
      if (label[s] >= 0) continue;
      std::vector<int> stack{s};
      label[s] = s;
      while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        for (int v = 0; v < n; ++v)
          if (adj[u][v] && label[v] < 0) {
            label[v] = s;
            stack.push_back(v);
          }
      }
    }
    return label;
  }
  std::uint64_t size_of(int v) const {
    const auto l = labels();
    return static_cast<std::uint64_t>(std::count(l.begin(), l.end(), l[v]));
  }
};

}  // namespace

TEST(InitState, Examples) {
  auto st = init_state(5);
  EXPECT_EQ(st.index.count(1), 5u);
  EXPECT_DOUBLE_EQ(st.S(2), 1.0);
  EXPECT_EQ(st.top_components(1)[0], 1u);
  EXPECT_EQ(st.step, 0u);
  auto one = init_state(1);
  EXPECT_EQ(one.index.count(1), 1u);
  try {
    init_state(0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_config);
  }
}

TEST(ApplyStep, SusceptibilityIncrement) {
  auto st = init_state(100, {2, 3});
  st.join(0, 1);
  st.join(1, 2);  // size 3
  for (std::uint32_t v = 10; v < 14; ++v) st.join(v, v + 1);  // size 5
  const double before = st.S(2);
  const double before3 = st.S(3);
  ASSERT_TRUE(st.join(0, 10));
  EXPECT_NEAR(st.S(2) - before, 0.30, 1e-15);
  EXPECT_NEAR(st.S(3) - before3, (512.0 - 27.0 - 125.0) / 100.0, 1e-13);
}

TEST(ApplyStep, SameComponentLeavesStatsUnchanged) {
  auto st = init_state(10);
  const auto er = er4_rule();
  const std::uint32_t first[4] = {1, 2, 5, 6};
  apply_draw(st, er, first);
  const auto before = take_snapshot(st, 0, 10);
  const std::uint32_t again[4] = {2, 1, 3, 4};
  const auto rec = apply_draw(st, er, again);
  EXPECT_FALSE(rec.merged);
  const auto after = take_snapshot(st, 0, 10);
  EXPECT_EQ(before.N, after.N);
  EXPECT_EQ(before.L1, after.L1);
  EXPECT_EQ(before.S, after.S);
  EXPECT_EQ(st.internal_edges, 1u);
  const std::uint32_t loop[4] = {7, 7, 3, 4};
  apply_draw(st, er, loop);
  EXPECT_EQ(st.self_loops, 1u);
  EXPECT_EQ(st.step, 3u);
}

TEST(ApplyStep, MergeSingletons) {
  auto st = init_state(10);
  const std::uint32_t draw[4] = {3, 4, 0, 1};
  apply_draw(st, er4_rule(), draw);
  const auto snap = take_snapshot(st, 0, 10);
  EXPECT_EQ(snap.N[1], 8u);
  EXPECT_EQ(snap.N[2], 2u);
}

TEST(TopComponents, Padding) {
  auto st = init_state(12);
  EXPECT_EQ(st.top_components(2), (std::vector<std::uint64_t>{1, 1}));
  for (std::uint32_t v = 0; v < 4; ++v) st.join(v, v + 1);  // 5
  st.join(5, 6);
  st.join(6, 7);  // 3
  st.join(8, 9);
  st.join(9, 10);  // 3
  st.join(11, 0);  // 6
  EXPECT_EQ(st.top_components(3), (std::vector<std::uint64_t>{6, 3, 3}));
  auto tiny = init_state(4);
  for (std::uint32_t v = 0; v < 3; ++v) tiny.join(v, v + 1);
  EXPECT_EQ(tiny.top_components(2), (std::vector<std::uint64_t>{4, 0}));
}

TEST(SizeIndex, SparseRegion) {
  SizeIndex idx(4);
  idx.add(3);
  idx.add(10);
  idx.add(10);
  idx.add(7);
  EXPECT_EQ(idx.top(3), (std::vector<std::uint64_t>{10, 10, 7}));
  idx.remove(10);
  EXPECT_EQ(idx.count(10), 1u);
  EXPECT_EQ(idx.vertex_total(), 20u);
}

TEST(Run, DeterministicCsv) {
  auto c = config_for(er4_rule(), 1000000, 0.6, 17);
  c.snapshot_times = {0.1, 0.3, 0.5, 0.6};
  std::ostringstream a, b;
  write_snapshot_csv(a, run(c));
  write_snapshot_csv(b, run(c));
  EXPECT_EQ(a.str(), b.str());
  c.seed = 18;
  std::ostringstream d;
  write_snapshot_csv(d, run(c));
  EXPECT_NE(a.str(), d.str());
}

TEST(Run, ErIsolatedFraction) {
  const std::uint64_t n = 1000000;
  auto c = config_for(er4_rule(), n, 0.3, 5);
  c.snapshot_times = {0.3};
  const auto snaps = run(c);
  const double tol = 3.0 * std::log(static_cast<double>(n)) / std::sqrt(static_cast<double>(n));
  EXPECT_NEAR(static_cast<double>(snaps[0].N[1]) / n, std::exp(-0.6), tol);
}

TEST(Run, ErCriticalLargestComponent) {
  const std::uint64_t n = 1000000;
  const double scale = std::pow(static_cast<double>(n), 2.0 / 3.0);
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto c = config_for(er4_rule(), n, 0.5, 1000 + seed);
    c.snapshot_times = {0.5};
    const double L1 = static_cast<double>(run(c)[0].L1);
    if (L1 >= scale / 20 && L1 <= 20 * scale) ++inside;
  }
  EXPECT_GE(inside, 48);
}

TEST(Run, InvariantsAlongTrajectory) {
  for (const auto& rule : {er4_rule(), bohman_frieze_rule(), even_rule(), no3_rule(), *builtin_rule("product")}) {
    auto c = config_for(rule, 20000, 1.2, 3);
    c.track_sr_orders = {2, 3};
    for (int i = 1; i <= 60; ++i) c.snapshot_times.push_back(0.02 * i);
    const auto snaps = run(c);
    ReachabilityInfo reach;
    if (!rule.is_unbounded()) reach = reachable_sizes(rule, 20000);
    for (std::size_t i = 0; i < snaps.size(); ++i) {
      const auto& s = snaps[i];
      std::uint64_t total = s.N_over;
      for (std::size_t k = 1; k < s.N.size(); ++k) {
        total += s.N[k];
        if (!rule.is_unbounded() && s.N[k] > 0) {
          EXPECT_TRUE(reach.contains(static_cast<int>(k))) << rule.name() << k;
        }
      }
      EXPECT_EQ(total, s.n);
      EXPECT_GE(s.L1, s.L2);
      const double L1 = static_cast<double>(s.L1);
      EXPECT_GE(s.S[0] * (1 + 1e-12), L1 * L1 / s.n);
      EXPECT_LE(s.S[0], L1 * (1 + 1e-12));
      if (i > 0) {
        const auto& p = snaps[i - 1];
        EXPECT_GE(s.L1, p.L1);
        EXPECT_GE(s.S[0], p.S[0]);
        EXPECT_GE(s.S[1], p.S[1]);
        EXPECT_LE(s.N[1], p.N[1]);
        if (!rule.is_unbounded()) {
          EXPECT_GE(s.N_omega, p.N_omega);
        }
        for (std::size_t k = 2; k < 40; ++k) EXPECT_GE(s.N_at_least(k), p.N_at_least(k));
      }
    }
  }
}

TEST(Run, SrAccumulatorMatchesRecount) {
  RunConfig c = config_for(bohman_frieze_rule(), 5000, 1.5, 9);
  c.track_sr_orders = {2, 3, 4};
  Simulation sim(c);
  sim.advance_to(c.total_steps());
  auto& st = sim.state();
  std::vector<uint128> direct(3, 0);
  st.index.for_each([&](std::uint64_t size, std::uint64_t count) {
    for (int r = 2; r <= 4; ++r) direct[r - 2] += pow128(size, r) * count;
  });
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(direct[i] == st.sr_sums[i]);
}

TEST(Run, BruteForceEquivalence) {
  for (const auto& rule : {er4_rule(), bohman_frieze_rule(), even_rule(), no3_rule(), *builtin_rule("sum")}) {
    for (int n = 1; n <= 8; ++n) {
      for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto st = init_state(static_cast<std::uint64_t>(n));
        CounterRng rng(seed, static_cast<std::uint64_t>(n));
        NaiveGraph g(n);
        for (int step = 0; step < 12; ++step) {
          const auto rec = apply_step(st, rule, rng);
          std::vector<std::uint64_t> sizes(rule.arity());
          for (int j = 0; j < rule.arity(); ++j) sizes[j] = g.size_of(static_cast<int>(rec.vertices[j]));
          RulePick pick;
          if (rule.is_unbounded()) pick = rule.pick_for_sizes(sizes.data());
          else pick = rule.evaluate(truncate_profile(sizes, rule.cutoff()));
          ASSERT_EQ(pick, rec.pick);
          const int u = static_cast<int>(rec.vertices[pick.first]), v = static_cast<int>(rec.vertices[pick.second]);
          g.adj[u][v] = g.adj[v][u] = true;
          const auto labels = g.labels();
          for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
              ASSERT_EQ(labels[a] == labels[b], st.find(a) == st.find(b)) << rule.name() << " n=" << n;
        }
      }
    }
  }
}

TEST(Rng, BelowIsUniformAndReplayable) {
  CounterRng a(42, 7), b(42, 7);
  std::vector<int> counts(6, 0);
  for (int i = 0; i < 60000; ++i) {
    const auto x = a.below(6);
    ASSERT_EQ(x, b.below(6));
    ++counts[x];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
  CounterRng other(42, 8);
  EXPECT_NE(CounterRng(42, 7)(), other());
}
