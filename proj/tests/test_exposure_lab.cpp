#include <gtest/gtest.h>

#include <cmath>

#include "bsrlab/exposure_lab.hpp"
#include "bsrlab/ode_core.hpp"

using namespace bsrlab;

namespace {

constexpr double kBfCriticalTime = 0.588157395444;

RunConfig bf_config(std::uint64_t n, double t_max, std::uint64_t seed) {
  RunConfig c;
  c.n = n;
  c.rule = bohman_frieze_rule();
  c.t_max = t_max;
  c.seed = seed;
  return c;
}

ParameterList small_list() {
  ParameterList s;
  s.cutoff = 1;
  s.NL = {{2, 20}, {3, 15}};
  s.Q = {{{1, 0}, 5}, {{1, 1}, 6}, {{1, 2}, 2}, {{2, 1}, 1.5}, {{0, 2}, 8}};
  return s;
}

std::vector<double> vertex_counts(const std::vector<std::uint64_t>& sizes, std::size_t max_j) {
  std::vector<double> n(max_j + 1, 0.0);
  for (auto k : sizes)
    if (k <= max_j) n[k] += static_cast<double>(k);
  return n;
}

}  // namespace

TEST(Tracker, InitialListAndInvariants) {
  const std::uint64_t n = 200000;
  const auto cfg = bf_config(n, 0.62, 4);
  const std::uint64_t i0 = static_cast<std::uint64_t>(0.57 * n), i1 = static_cast<std::uint64_t>(0.62 * n);
  std::vector<std::uint64_t> steps;
  for (std::uint64_t s = i0; s <= i1; s += 1000) steps.push_back(s);
  const auto lists = track_exposure(cfg, i0, i1, steps);

  Simulation sim(cfg);
  sim.advance_to(i0);
  const auto snap = sim.snapshot();
  const auto& first = lists.at(i0);
  EXPECT_EQ(first.q(1, 0), static_cast<double>(snap.N[1]));
  EXPECT_EQ(first.q(0, 2), 0.0);
  for (const auto& [kr, v] : first.Q) EXPECT_TRUE(kr.second == 0 && kr.first <= 1);

  double prev_q02 = -1, prev_w = -1;
  const double vs = first.v_small();
  for (const auto& [step, s] : lists) {
    EXPECT_EQ(s.order(), static_cast<double>(n));
    EXPECT_EQ(s.v_small(), vs);
    EXPECT_EQ(s.NL, first.NL);
    EXPECT_GE(s.q(0, 2), prev_q02);
    EXPECT_GE(s.stub_weight(), prev_w);
    prev_q02 = s.q(0, 2);
    prev_w = s.stub_weight();
  }
  EXPECT_GT(prev_q02, 0.0);
  EXPECT_THROW(track_exposure(cfg, i0, i1 + n, {i0}), Error);
}

TEST(Tracker, FirstRoundDeterminesEveryDecision) {
  for (const auto& rule : {bohman_frieze_rule(), no3_rule(), even_rule()}) {
    RunConfig cfg;
    cfg.n = 50000;
    cfg.rule = rule;
    cfg.t_max = 0.9;
    cfg.seed = 12;
    Simulation sim(cfg);
    sim.advance_to(20000);
    MarkedGraphTracker tracker(sim.state(), rule.cutoff());
    std::uint64_t checked = 0;
    sim.advance_to(cfg.total_steps(), [&](const StepRecord& rec) {
      for (int j = 0; j < rec.arity; ++j) {
        const auto known = tracker.class_of(rec.vertices[j]);
        const auto truth = TruncatedSize::of(rec.sizes[j], rule.cutoff());
        ASSERT_EQ(known, truth);
        ++checked;
      }
      tracker.observe(rec.vertices[rec.pick.first], rec.vertices[rec.pick.second]);
    });
    EXPECT_GT(checked, 0u);
  }
}

TEST(Tracker, MatchesPieceDensities) {
  const std::uint64_t n = 1000000;
  const auto rule = bohman_frieze_rule();
  const auto window = CriticalWindow::make(kBfCriticalTime, 0.12);
  const auto rho = integrate_rho(rule, 128, window.t1, 1e-4, {window.t0});
  const auto q = integrate_q(rule, window, rho, 48, 12, 1e-4, {kBfCriticalTime});
  const auto cfg = bf_config(n, window.t1, 8);
  const auto i0 = static_cast<std::uint64_t>(std::llround(window.t0 * n));
  const auto i = static_cast<std::uint64_t>(std::llround(kBfCriticalTime * n));
  const auto lists = track_exposure(cfg, i0, i, {i});
  const auto& s = lists.at(i);
  const auto [lo, hi, w] = q.bracket(static_cast<double>(i) / n);
  const double tol = 3 * std::pow(std::log(static_cast<double>(n)), 2) / std::sqrt(static_cast<double>(n));
  int compared = 0;
  for (int k = 0; k <= 12; ++k)
    for (int r = 0; r <= 6; ++r) {
      const double ode = (1 - w) * q.q(lo, k, r) + w * q.q(hi, k, r);
      if (ode < 1e-4) continue;
      // Fluctuations are O(sqrt(q/n)), well inside the stated band.
      EXPECT_NEAR(s.q(k, r) / n, ode, 6 * std::sqrt(ode / n) + 1e-5) << k << "," << r;
      if (ode < 10 / std::sqrt(static_cast<double>(n))) continue;
      EXPECT_NEAR(s.q(k, r) / n, ode, tol) << k << "," << r;
      ++compared;
    }
  EXPECT_GE(compared, 4);
}

TEST(ParameterList, JsonRoundTrip) {
  const auto s = small_list();
  const auto back = parameter_list_from_json(to_json(s));
  EXPECT_EQ(back.NL, s.NL);
  EXPECT_EQ(back.Q, s.Q);
  EXPECT_EQ(to_json(s)["n"].get<double>(), 51.0);
  auto bad = to_json(s);
  bad["NL"]["3"] = 14;
  EXPECT_THROW(parameter_list_from_json(bad), Error);
}

TEST(SampleGraph, NoRandomEdgesKeepsInitialGraph) {
  ParameterList s;
  s.cutoff = 2;
  s.NL = {{3, 9}, {7, 7}};
  s.Q = {{{1, 0}, 4}, {{2, 0}, 1}};
  CounterRng rng(1, 1);
  EXPECT_EQ(sample_graph(s, false, rng), (std::vector<std::uint64_t>{7, 3, 3, 3, 2, 1, 1, 1, 1}));
}

TEST(SampleGraph, ExactModeRejectsFractions) {
  CounterRng rng(1, 1);
  try {
    sample_graph(small_list(), false, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::mode);
  }
  EXPECT_NO_THROW(sample_graph(small_list(), true, rng));
}

TEST(SampleGraph, PoissonizedPieceCounts) {
  ParameterList s;
  s.cutoff = 4;
  s.NL = {{5, 50}};
  s.Q = {{{3, 0}, 2.5}};
  CounterRng rng(3, 9);
  const int draws = 10000;
  double total = 0;
  for (int i = 0; i < draws; ++i) {
    const auto sizes = sample_graph(s, true, rng);
    total += static_cast<double>(std::count(sizes.begin(), sizes.end(), 3u));
  }
  EXPECT_NEAR(total / draws, 2.5, 4 * std::sqrt(2.5 / draws));
}

TEST(SampleGraph, StubsAttachToLargeSide) {
  ParameterList s;
  s.cutoff = 1;
  s.NL = {{10, 10}};
  s.Q = {{{1, 1}, 5}, {{0, 2}, 3}};
  CounterRng rng(5, 5);
  EXPECT_EQ(sample_graph(s, false, rng), (std::vector<std::uint64_t>{15}));
}

TEST(Explore, TraceInvariants) {
  const auto s = small_list();
  CounterRng rng(77, 1);
  for (int i = 0; i < 2000; ++i) {
    const auto tr = explore(s, rng);
    ASSERT_EQ(tr.M.front(), tr.initial_large);
    ASSERT_EQ(tr.S.front(), tr.s0);
    for (std::size_t j = 0; j < tr.M.size(); ++j) {
      const auto expect = tr.M[j] > j ? tr.M[j] - j : 0;
      ASSERT_EQ(tr.active[j], expect);
      if (j > 0) {
        ASSERT_GE(tr.M[j], tr.M[j - 1]);
        ASSERT_GE(tr.S[j], tr.S[j - 1]);
      }
    }
    ASSERT_EQ(tr.active.back(), 0u);
    ASSERT_EQ(tr.M.back(), tr.M.size() - 1);
  }
}

TEST(Explore, NothingToReveal) {
  ParameterList s;
  s.cutoff = 3;
  s.NL = {{4, 8}};
  CounterRng rng(2, 2);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(explore(s, rng).total(), 4u);
}

TEST(Explore, SizeLawMatchesPoissonizedGraph) {
  const auto s = small_list();
  const std::size_t max_j = 30;
  const int draws = 100000;
  CounterRng g_rng(11, 1), t_rng(11, 2);
  std::vector<double> mean(max_j + 1, 0.0), sq(max_j + 1, 0.0), hits(max_j + 1, 0.0);
  for (int d = 0; d < draws; ++d) {
    const auto n = vertex_counts(sample_graph(s, true, g_rng), max_j);
    for (std::size_t j = 1; j <= max_j; ++j) {
      mean[j] += n[j];
      sq[j] += n[j] * n[j];
    }
    const auto size = explore(s, t_rng).total();
    if (size <= max_j) hits[size] += 1;
  }
  const double order = s.order();
  for (std::size_t j = 1; j <= max_j; ++j) {
    const double m = mean[j] / draws;
    const double var = sq[j] / draws - m * m;
    const double p = hits[j] / draws;
    const double se = std::sqrt(var / draws + order * order * p * (1 - p) / draws);
    EXPECT_NEAR(m, p * order, 5 * se + 1e-9) << j;
  }
}

TEST(Equivalence, RejectsZeroRunsAndWarnsOnFew) {
  const auto bf = bohman_frieze_rule();
  EXPECT_THROW(equivalence_test(bf, 1000, 500, 580, 0, 1), Error);
  EXPECT_TRUE(equivalence_test(bf, 1000, 500, 580, 10, 1).power_warning);
}

TEST(Equivalence, NullHoldsAndCorruptionIsDetected) {
  const auto bf = bohman_frieze_rule();
  const std::uint64_t n = 20000;
  const auto i0 = static_cast<std::uint64_t>(0.5725 * n), i = static_cast<std::uint64_t>(kBfCriticalTime * n);
  const auto null = equivalence_test(bf, n, i0, i, 80, 5);
  EXPECT_GE(null.test.p_value, 0.001);
  EXPECT_GT(null.test.dof, 5);
  const auto bad = equivalence_test(bf, n, i0, i, 80, 5, [](ParameterList& s) { s.Q[{0, 2}] *= 2; });
  EXPECT_LT(bad.test.p_value, 1e-3);
}

TEST(Equivalence, SelfComparisonIsCalibrated) {
  // Two independent halves of G-samples: p-values should not pile up near zero.
  const auto bf = bohman_frieze_rule();
  const std::uint64_t n = 10000;
  int small = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto rep = equivalence_test(bf, n, 5700, 5880, 60, 100 + seed);
    std::vector<ComponentProfile> a(rep.g_profiles.begin(), rep.g_profiles.begin() + 30);
    std::vector<ComponentProfile> b(rep.g_profiles.begin() + 30, rep.g_profiles.end());
    if (chi_square_homogeneity(a, b).p_value < 0.05) ++small;
  }
  EXPECT_LE(small, 3);
}

TEST(TailDiagnostics, DecayingTailsOnLattice) {
  const std::uint64_t n = 1000000;
  const auto lists = track_exposure(bf_config(n, 0.6, 3), 572532, 600000, {572532, 588157, 600000});
  std::vector<ParameterList> series;
  for (const auto& [step, s] : lists) series.push_back(s);
  const auto d = tail_diagnostics(series);
  EXPECT_GT(d.q_rate, 0.0);
  EXPECT_GT(d.n_rate, 0.0);
  EXPECT_LT(d.max_large_k, 40 * std::log(static_cast<double>(n)) * 10);
  EXPECT_EQ(d.lattice_violations, 0);

  RunConfig even;
  even.n = 200000;
  even.rule = even_rule();
  even.t_max = 0.5;
  even.seed = 1;
  const auto ev = track_exposure(even, 80000, 100000, {100000});
  EXPECT_EQ(tail_diagnostics({ev.at(100000)}, 2).lattice_violations, 0);
}
