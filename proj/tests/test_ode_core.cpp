#include <gtest/gtest.h>

#include <cmath>

#include "bsrlab/ode_core.hpp"

using namespace bsrlab;

namespace {

// Frozen from estimate_tc(bf, 1e8, 1e-5); the h=1e-4 run agrees to 1e-12.
constexpr double kBfCriticalTime = 0.588157395444;

double borel(int k, double t) {
  return std::exp((k - 1) * std::log(k * 2.0 * t) - 2.0 * t * k - std::lgamma(k + 1.0));
}

// Brute enumeration of the 16 Bohman-Frieze profiles over classes {1, w}.
double bf_w11(double rho1) {
  const double m[2] = {rho1, 1 - rho1};
  double total = 0;
  for (int p = 0; p < 16; ++p) {
    const int c[4] = {p & 1, (p >> 1) & 1, (p >> 2) & 1, (p >> 3) & 1};  // 0 = size 1
    const bool first = c[0] == 0 && c[1] == 0;
    const int a = first ? 0 : 2, b = first ? 1 : 3;
    if (c[a] != 0 || c[b] != 0) continue;
    double prod = 1;
    for (int j = 0; j < 4; ++j)
      if (j != a && j != b) prod *= m[c[j]];
    total += prod;
  }
  return total;
}

RuleSpec k0_rule() {
  return RuleSpec::from_predicate("k0", 3, 0, [](auto) { return RulePick{1, 2}; });
}

}  // namespace

TEST(PairWeights, ErIsIdentity) {
  const auto w = pair_weights(er4_rule(), {1.0});
  EXPECT_DOUBLE_EQ(w(0, 0), 1.0);
}

TEST(PairWeights, BohmanFriezeSingletonPair) {
  for (double r1 : {0.0, 0.2, 0.5, 0.9, 1.0}) {
    const auto w = pair_weights(bohman_frieze_rule(), {r1, 1 - r1});
    EXPECT_NEAR(w(0, 0), 2 - r1 * r1, 1e-15);
    EXPECT_NEAR(w(0, 0), bf_w11(r1), 1e-15);
  }
}

TEST(PairWeights, TotalProfileProbability) {
  for (const auto& rule : {er4_rule(), bohman_frieze_rule(), even_rule(), no3_rule()}) {
    std::vector<double> m(rule.class_count());
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s += (m[i] = 1.0 + 0.37 * static_cast<double>(i));
    for (auto& x : m) x /= s;
    const auto w = pair_weights(rule, m);
    double total = 0;
    for (int a = 0; a < rule.class_count(); ++a)
      for (int b = 0; b < rule.class_count(); ++b) total += w(a, b) * m[a] * m[b];
    EXPECT_NEAR(total, 1.0, 1e-14) << rule.name();
  }
}

TEST(PairWeights, RejectsUnbounded) {
  try {
    pair_weights(*builtin_rule("product"), {1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::theory_unsupported);
  }
}

TEST(IntegrateRho, ErIsolatedVertices) {
  const auto sol = integrate_rho(er4_rule(), 32, 1.0, 1e-4, {0.1, 0.5});
  for (double t : {0.1, 0.5, 1.0}) EXPECT_NEAR(sol.rho(sol.index_of(t), 1), std::exp(-2 * t), 1e-8);
}

TEST(IntegrateRho, ErBorelLaw) {
  const auto sol = integrate_rho(er4_rule(), 64, 0.5, 1e-4, {0.25});
  for (double t : {0.25, 0.5})
    for (int k = 1; k <= 10; ++k) EXPECT_NEAR(sol.rho(sol.index_of(t), k), borel(k, t), 1e-7) << k;
  // rho_k(1/2) k^{3/2} approaches 1/sqrt(2 pi).
  const auto i = sol.index_of(0.5);
  EXPECT_NEAR(sol.rho(i, 64) * std::pow(64.0, 1.5), 1 / std::sqrt(2 * M_PI), 0.01);
}

TEST(IntegrateRho, UnreachableSizesStayZero) {
  const auto even = integrate_rho(even_rule(), 64, 0.6, 1e-3);
  const auto no3 = integrate_rho(no3_rule(), 64, 0.5, 1e-3);
  for (std::size_t i = 0; i < even.size(); ++i) {
    for (int k = 3; k <= 64; k += 2) EXPECT_EQ(even.rho(i, k), 0.0);
    EXPECT_EQ(no3.rho(std::min(i, no3.size() - 1), 3), 0.0);
  }
  EXPECT_GT(even.rho(even.size() - 1, 4), 0.0);
  EXPECT_GT(no3.rho(no3.size() - 1, 5), 0.0);
}

TEST(IntegrateRho, FiniteAndExtendedSystemsAgree) {
  for (const auto& rule : {bohman_frieze_rule(), no3_rule(), even_rule()}) {
    const auto sol = integrate_rho(rule, 128, 1.0, 1e-3);
    for (std::size_t i = 0; i < sol.size(); ++i) {
      for (int c = 0; c < rule.cutoff(); ++c) ASSERT_NEAR(sol.finite_class(i, c), sol.rho(i, c + 1), 1e-12);
      ASSERT_NEAR(sol.finite_class(i, rule.cutoff()), sol.omega(i), 1e-12);
    }
  }
}

TEST(IntegrateRho, OmegaMassGrowsAndBothEndsPositive) {
  const auto sol = integrate_rho(bohman_frieze_rule(), 64, 1.2, 1e-3);
  for (std::size_t i = 1; i < sol.size(); ++i) {
    EXPECT_GE(sol.finite_class(i, 1), sol.finite_class(i - 1, 1));
    EXPECT_GT(std::min(sol.rho(i, 1), sol.finite_class(i, 1)), 0.0);
  }
}

TEST(IntegrateRho, FourthOrderConvergence) {
  const auto bf = bohman_frieze_rule();
  auto value = [&](double h) {
    const auto s = integrate_rho(bf, 48, 0.5, h);
    return s.rho(s.size() - 1, 7);
  };
  const double a = value(0.04), b = value(0.02), c = value(0.01);
  EXPECT_GE(std::abs(a - b) / std::abs(b - c), 8.0);
}

TEST(IntegrateRho, SubcriticalTailShrinksWithKmax) {
  double previous = 1.0;
  for (int k_max : {25, 50, 100, 200}) {
    const auto s = integrate_rho(er4_rule(), k_max, 0.4, 1e-3);
    const double tail = s.tail(s.size() - 1);
    EXPECT_LT(tail, previous);
    previous = tail;
  }
  EXPECT_LT(previous, 1e-4);
}

TEST(IntegrateRho, CoarseStepIsRejected) {
  try {
    integrate_rho(er4_rule(), 256, 0.49, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::refine_step);
  }
}

TEST(EstimateTc, ErdosRenyi) {
  const auto c = estimate_tc(er4_rule(), 1e8, 1e-4);
  EXPECT_NEAR(c.t_c, 0.5, 1e-4);
  for (std::size_t i = 0; i < c.t.size(); ++i) {
    const double exact = 1 / (1 - 2 * c.t[i]);
    ASSERT_NEAR(c.s2[i] / exact, 1.0, 1e-6) << c.t[i];
    if (i > 0) {
      ASSERT_GT(c.s2[i], c.s2[i - 1]);
    }
  }
  EXPECT_EQ(c.s2.front(), 1.0);
}

TEST(EstimateTc, AnyCutoffZeroRuleIsErdosRenyi) {
  EXPECT_NEAR(estimate_tc(k0_rule()).t_c, 0.5, 1e-4);
}

TEST(EstimateTc, BohmanFriezeRegression) {
  const auto coarse = estimate_tc(bohman_frieze_rule(), 1e8, 1e-4);
  EXPECT_NEAR(coarse.t_c, kBfCriticalTime, 1e-10);
  EXPECT_LT(coarse.err, 1e-8);
}

TEST(EstimateTc, BohmanFriezeSusceptibilityMatchesSimulation) {
  const auto curve = estimate_tc(bohman_frieze_rule(), 1e8, 1e-4);
  RunConfig cfg;
  cfg.n = 1000000;
  cfg.rule = bohman_frieze_rule();
  cfg.t_max = 0.5;
  cfg.seed = 11;
  cfg.snapshot_times = {0.3, 0.5};
  const auto snaps = run(cfg);
  for (const auto& s : snaps) {
    const auto it = std::lower_bound(curve.t.begin(), curve.t.end(), s.t - 1e-12);
    const double predicted = curve.s2[static_cast<std::size_t>(it - curve.t.begin())];
    EXPECT_NEAR(s.S[0] / predicted, 1.0, 0.02) << s.t;
  }
}

TEST(EstimateTc, UnboundedRuleRejected) {
  EXPECT_THROW(estimate_tc(*builtin_rule("sum")), Error);
}

TEST(CriticalWindow, SigmaFormula) {
  const auto er = CriticalWindow::for_rule(er4_rule(), 0.5);
  EXPECT_DOUBLE_EQ(er.sigma, 1.0 / 32);
  const auto bf = CriticalWindow::for_rule(bohman_frieze_rule(), kBfCriticalTime);
  EXPECT_DOUBLE_EQ(bf.sigma, 1.0 / 64);
  EXPECT_LT(bf.t0, bf.t_c);
  EXPECT_GT(bf.t1, bf.t_c);
}

class QSystemTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto bf = bohman_frieze_rule();
    window_ = CriticalWindow::for_rule(bf, kBfCriticalTime);
    rho_ = new RhoSolution(integrate_rho(bf, 128, window_.t1, 1e-4, {window_.t0}));
    q_ = new QSolution(integrate_q(bf, window_, *rho_, 48, 12, 1e-4));
  }
  static void TearDownTestSuite() {
    delete rho_;
    delete q_;
  }
  static CriticalWindow window_;
  static RhoSolution* rho_;
  static QSolution* q_;
};
CriticalWindow QSystemTest::window_;
RhoSolution* QSystemTest::rho_ = nullptr;
QSolution* QSystemTest::q_ = nullptr;

TEST_F(QSystemTest, InitialValues) {
  const double r1 = rho_->rho(rho_->index_of(window_.t0), 1);
  EXPECT_DOUBLE_EQ(q_->q(0, 1, 0), r1);
  for (int k = 0; k <= q_->k_max; ++k)
    for (int r = 0; r <= q_->r_max; ++r)
      if (!(k == 1 && r == 0)) {
        EXPECT_EQ(q_->q(0, k, r), 0.0);
      }
  EXPECT_EQ(q_->u.front(), 0.0);
}

TEST_F(QSystemTest, UStrictlyIncreasing) {
  for (std::size_t i = 1; i < q_->u.size(); ++i) ASSERT_GT(q_->u[i], q_->u[i - 1]);
}

TEST_F(QSystemTest, ConservationAndGridAgreement) {
  const auto rep = conservation_report(*rho_, *q_);
  EXPECT_LT(rep.q_mass, 1e-10);
  EXPECT_LT(rep.omega, 1e-10);
  EXPECT_LT(rep.rho_total, 1e-12);
  // The co-integrated class masses match the rho solution on the shared grid.
  for (std::size_t i = 0; i < q_->t.size(); i += 50) {
    const auto j = rho_->index_of(q_->t[i]);
    EXPECT_NEAR(q_->rho_class(i, 0), rho_->rho(j, 1), 1e-12);
  }
}

TEST_F(QSystemTest, SupportAfterStart) {
  const auto last = q_->t.size() - 1;
  for (int k = 1; k <= 8; ++k)
    for (int r = 0; r <= 4; ++r) EXPECT_GT(q_->q(last, k, r), 0.0) << k << "," << r;
  EXPECT_GT(q_->q02(last), 0.0);
}

TEST(QSystem, EvenRuleStubbedPiecesHaveEvenSize) {
  const auto rule = even_rule();
  const auto c = estimate_tc(rule);
  const auto w = CriticalWindow::for_rule(rule, c.t_c);
  const auto rho = integrate_rho(rule, 64, w.t1, 1e-4, {w.t0});
  const auto q = integrate_q(rule, w, rho, 32, 8, 1e-4);
  const auto last = q.t.size() - 1;
  for (int k = 1; k <= 32; ++k)
    for (int r = 1; r <= 8; ++r) {
      if (k % 2 == 1) {
        EXPECT_EQ(q.q(last, k, r), 0.0);
      } else if (k <= 8 && r <= 3) {
        EXPECT_GT(q.q(last, k, r), 0.0);
      }
    }
}

TEST(QSystem, ErdosRenyiResiduals) {
  const auto er = er4_rule();
  const auto w = CriticalWindow::for_rule(er, 0.5);
  const auto rho = integrate_rho(er, 200, w.t1, 1e-4, {w.t0});
  const auto q = integrate_q(er, w, rho, 16, 4, 1e-4);
  const auto rep = conservation_report(rho, q);
  EXPECT_LT(rep.q_mass, 1e-6);
  EXPECT_LT(rep.rho_total, 1e-6);
  // Only V_L-V_L edges exist: q_{0,2}(t) = t - t0.
  EXPECT_NEAR(q.q02(q.t.size() - 1), w.t1 - w.t0, 1e-12);
}

TEST(QSystem, TruncationIsReported) {
  const auto bf = bohman_frieze_rule();
  const auto w = CriticalWindow::make(kBfCriticalTime, 0.15);
  const auto rho = integrate_rho(bf, 64, w.t1, 1e-3, {w.t0});
  try {
    integrate_q(bf, w, rho, 2, 2, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::truncation);
  }
}
