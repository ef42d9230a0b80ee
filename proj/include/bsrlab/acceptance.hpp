#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>
#include <json.hpp>

#include "bsrlab/exposure_lab.hpp"
#include "bsrlab/experiments.hpp"

namespace bsrlab {

struct AcceptanceConfig {
  std::uint64_t large_n = 10000000;
  int large_seeds = 11;
  std::uint64_t seed_base = 1;
  std::uint64_t profile_n = 1000000;
  int profile_seeds = 5;
  std::uint64_t equiv_n = 100000;
  int equiv_runs = 200;
  std::uint64_t equiv_seed = 2024;
};

struct CriterionResult {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string summary;
  nlohmann::json detail = nlohmann::json::object();
  double seconds = 0.0;
  double limit = 0.0;  // seconds
};

inline nlohmann::json to_json(const CriterionResult& r) {
  return {{"id", r.id},           {"title", r.title},     {"pass", r.pass}, {"summary", r.summary},
          {"detail", r.detail},   {"seconds", r.seconds}, {"limit_seconds", r.limit}};
}

inline CriterionResult make_result(int id, std::string title, double limit) {
  CriterionResult c;
  c.id = id;
  c.title = std::move(title);
  c.limit = limit;
  return c;
}

inline std::string format_fixed(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

// Lazily built engines and simulation runs shared between criteria.
class AcceptanceContext {
 public:
  explicit AcceptanceContext(AcceptanceConfig cfg = {}) : cfg_(cfg) {}

  const AcceptanceConfig& config() const { return cfg_; }

  static const std::vector<double>& er_offsets() {
    static const std::vector<double> v{-0.05, 0.005, 0.01, 0.03, 0.05, 0.1};
    return v;
  }
  static const std::vector<double>& bf_offsets() {
    static const std::vector<double> v{-0.1, -0.05, -0.02, 0.03, 0.05, 0.1};
    return v;
  }

  const TheoryEngine& er() {
    if (!er_) er_ = std::make_unique<TheoryEngine>(er4_rule(), experiment_theory_options(er_offsets()));
    return *er_;
  }
  const TheoryEngine& bf() {
    if (!bf_) bf_ = std::make_unique<TheoryEngine>(bohman_frieze_rule(), experiment_theory_options(bf_offsets()));
    return *bf_;
  }

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s;
    for (int i = 0; i < cfg_.large_seeds; ++i) s.push_back(cfg_.seed_base + static_cast<std::uint64_t>(i));
    return s;
  }

  // One run per seed serves every large-n cell of the rule.
  const SeedRuns& er_runs() {
    if (!er_runs_) er_runs_ = runs_for(er(), {-0.05, 0.03, 0.05, 0.1});
    return *er_runs_;
  }
  const SeedRuns& bf_runs() {
    if (!bf_runs_) bf_runs_ = runs_for(bf(), {-0.1, -0.05, -0.02, 0.0, 0.03, 0.05, 0.1});
    return *bf_runs_;
  }

 private:
  SeedRuns runs_for(const TheoryEngine& th, const std::vector<double>& offsets) {
    std::vector<double> times;
    for (double d : offsets) times.push_back(th.t_c() + d);
    return sample_runs(th.rule(), cfg_.large_n, times, seeds(), {2, 3});
  }

  AcceptanceConfig cfg_;
  std::unique_ptr<TheoryEngine> er_, bf_;
  std::optional<SeedRuns> er_runs_, bf_runs_;
};

namespace detail {

// Adjacency-matrix reference partition by repeated depth-first search.
class NaiveGraph {
 public:
  explicit NaiveGraph(int n) : n_(n), adj_(static_cast<std::size_t>(n * n), false) {}
  void add(int u, int v) { adj_[idx(u, v)] = adj_[idx(v, u)] = true; }
  std::vector<int> labels() const {
    std::vector<int> label(n_, -1);
    for (int s = 0; s < n_; ++s) {
      if (label[s] >= 0) continue;
      std::vector<int> stack{s};
      label[s] = s;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int v = 0; v < n_; ++v)
          if (adj_[idx(u, v)] && label[v] < 0) {
            label[v] = s;
            stack.push_back(v);
          }
      }
    }
    return label;
  }

 private:
  std::size_t idx(int u, int v) const { return static_cast<std::size_t>(u * n_ + v); }
  int n_;
  std::vector<bool> adj_;
};

// Replays random draws for n <= n_max through the simulator and the naive
// reference; returns the number of traces checked or the first mismatch.
inline std::pair<std::uint64_t, std::string> brute_force_equivalence(const std::vector<RuleSpec>& rules, int n_max,
                                                                     int seeds, int steps) {
  std::uint64_t traces = 0;
  for (const auto& rule : rules)
    for (int n = 1; n <= n_max; ++n)
      for (int seed = 0; seed < seeds; ++seed) {
        auto st = init_state(static_cast<std::uint64_t>(n));
        CounterRng rng(stream_key(0xb7u, static_cast<std::uint64_t>(seed)), static_cast<std::uint64_t>(n));
        NaiveGraph g(n);
        for (int step = 0; step < steps; ++step) {
          const auto before = g.labels();
          const auto rec = apply_step(st, rule, rng);
          std::vector<std::uint64_t> sizes(static_cast<std::size_t>(rule.arity()));
          for (int j = 0; j < rule.arity(); ++j) {
            const int label = before[rec.vertices[j]];
            sizes[j] = static_cast<std::uint64_t>(std::count(before.begin(), before.end(), label));
          }
          const RulePick pick = rule.is_unbounded() ? rule.pick_for_sizes(sizes.data())
                                                    : rule.evaluate(truncate_profile(sizes, rule.cutoff()));
          if (!(pick == rec.pick)) return {traces, rule.name() + ": pick mismatch at n=" + std::to_string(n)};
          g.add(static_cast<int>(rec.vertices[pick.first]), static_cast<int>(rec.vertices[pick.second]));
          const auto after = g.labels();
          for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
              if ((after[a] == after[b]) != (st.find(a) == st.find(b)))
                return {traces, rule.name() + ": partition mismatch at n=" + std::to_string(n)};
        }
        ++traces;
      }
  return {traces, ""};
}

inline double er_survival_root(double t) {
  // 1 - rho = exp(-2 t rho) on (0, 1).
  auto f = [t](double r) { return 1 - r - std::exp(-2 * t * r); };
  boost::uintmax_t iters = 200;
  const auto [lo, hi] = boost::math::tools::toms748_solve(f, 1e-9, 1.0, boost::math::tools::eps_tolerance<double>(52),
                                                          iters);
  return 0.5 * (lo + hi);
}

inline double er_psi(double t) { return 2 * t - 1 - std::log(2 * t); }

inline std::string records_summary(const std::vector<ReportRecord>& recs) {
  std::string s;
  for (const auto& r : recs) {
    if (!s.empty()) s += "; ";
    s += r.cell.value("rule", "") + " ";
    if (r.cell.contains("k")) s += "k=" + r.cell["k"].dump() + " ";
    if (r.cell.contains("r")) s += "r=" + r.cell["r"].dump() + " ";
    if (r.cell.contains("eps") && r.cell["eps"].get<double>() != 0) s += "eps=" + format_fixed(r.cell["eps"], 3) + " ";
    s += format_fixed(r.measured, 5) + " vs " + format_fixed(r.predicted, 5) + (r.pass ? "" : " FAIL");
  }
  return s;
}

inline nlohmann::json records_json(const std::vector<ReportRecord>& recs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : recs) a.push_back(to_json(r));
  return a;
}

inline bool all_pass(const std::vector<ReportRecord>& recs) {
  return !recs.empty() && std::all_of(recs.begin(), recs.end(), [](const ReportRecord& r) { return r.pass; });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Criteria

inline CriterionResult criterion_er_critical_time(AcceptanceContext&) {
  auto c = make_result(1, "ER critical time", 60);
  const auto curve = estimate_tc(er4_rule());
  double worst = 0;
  for (std::size_t i = 0; i < curve.t.size(); ++i)
    if (curve.t[i] < curve.t_c) worst = std::max(worst, std::abs(curve.s2[i] * (1 - 2 * curve.t[i]) - 1));
  c.pass = std::abs(curve.t_c - 0.5) <= 1e-4 && worst <= 1e-6;
  c.summary = "t_c=" + format_fixed(curve.t_c, 10) + " max rel err s2=" + format_fixed(worst, 3);
  c.detail = {{"t_c", curve.t_c}, {"err", curve.err}, {"s2_max_rel_error", worst}, {"grid_points", curve.t.size()}};
  return c;
}

inline CriterionResult criterion_er_survival(AcceptanceContext& ctx) {
  auto c = make_result(2, "ER survival", 60);
  const auto& th = ctx.er();
  const double rho = th.survival(0.6).rho;
  const double root = detail::er_survival_root(0.6);
  auto slope = [&](double d) { return th.survival(th.t_c() + d).rho / d; };
  const double d1 = slope(0.01), d2 = slope(0.005);
  const double richardson = 2 * d2 - d1;
  c.pass = std::abs(rho - root) <= 1e-6 && std::abs(richardson - 4) <= 0.05;
  c.summary = "rho(0.6)=" + format_fixed(rho, 10) + " root=" + format_fixed(root, 10) +
              " slope=" + format_fixed(richardson, 6);
  c.detail = {{"rho", rho}, {"root", root}, {"slope", richardson}, {"difference_quotients", {d1, d2}}};
  return c;
}

inline CriterionResult criterion_er_tail(AcceptanceContext& ctx) {
  auto c = make_result(3, "ER tail constants", 300);
  const auto& th = ctx.er();
  const auto& cv = th.curvature();
  const double theta0 = 1 / std::sqrt(2 * M_PI);
  const double p45 = th.tail(0.45).psi, p55 = th.tail(0.55).psi;
  const double e45 = std::abs(p45 - detail::er_psi(0.45)), e55 = std::abs(p55 - detail::er_psi(0.55));
  c.pass = std::abs(cv.theta / theta0 - 1) <= 0.01 && std::abs(cv.psi_pp - 4) <= 0.1 && e45 <= 5e-4 && e55 <= 5e-4;
  c.summary = "theta=" + format_fixed(cv.theta) + " (target " + format_fixed(theta0) + ") psi''=" +
              format_fixed(cv.psi_pp) + " |dpsi(0.45)|=" + format_fixed(e45, 2) + " |dpsi(0.55)|=" + format_fixed(e55, 2);
  c.detail = {{"theta", cv.theta}, {"psi_pp", cv.psi_pp}, {"psi_045", p45}, {"psi_055", p55},
              {"psi_045_exact", detail::er_psi(0.45)}, {"psi_055_exact", detail::er_psi(0.55)}};
  return c;
}

inline CriterionResult criterion_er_constants(AcceptanceContext& ctx) {
  auto c = make_result(4, "ER susceptibility constants", 300);
  const auto table = ctx.er().constants({2, 3, 4});
  const std::map<int, double> exact{{2, 0.5}, {3, 0.125}, {4, 3.0 / 32}};
  c.pass = true;
  for (const auto& [r, b] : exact) {
    const double rel = std::abs(table.at(r) / b - 1);
    c.pass = c.pass && rel <= 0.02;
    c.summary += "B" + std::to_string(r) + "=" + format_fixed(table.at(r), 5) + " ";
    c.detail["B" + std::to_string(r)] = {{"value", table.at(r)}, {"exact", b}, {"rel_error", rel}};
  }
  return c;
}

inline CriterionResult criterion_cross_engine(AcceptanceContext& ctx) {
  auto c = make_result(5, "Cross-engine consistency", 600);
  c.pass = true;
  for (const TheoryEngine* th : {&ctx.er(), &ctx.bf()}) {
    const auto& grid = th->q().t;
    const std::size_t stride = std::max<std::size_t>(1, grid.size() / 300);
    double worst = 0;
    std::size_t evaluated = 0;
    for (std::size_t i = 0; i < grid.size(); i += stride) {
      const auto pts = th->points(grid[i], 128);
      const auto j = th->rho().index_of(grid[i]);
      for (int k = 1; k <= 128; ++k) worst = std::max(worst, std::abs(pts.p[k] - th->rho().rho(j, k)));
      ++evaluated;
    }
    c.pass = c.pass && worst <= 1e-5;
    c.summary += th->rule().name() + " max gap=" + format_fixed(worst, 3) + " over " + std::to_string(evaluated) + " times; ";
    c.detail[th->rule().name()] = {{"max_gap", worst}, {"times", evaluated}, {"t0", grid.front()}, {"t1", grid.back()}};
  }
  return c;
}

inline CriterionResult criterion_sim_vs_ode(AcceptanceContext& ctx) {
  auto c = make_result(6, "Simulation vs ODE", 600);
  const auto rule = bohman_frieze_rule();
  const std::uint64_t n = ctx.config().profile_n;
  std::vector<double> times;
  for (int j = 1; j <= 100; ++j) times.push_back(0.01 * j);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < ctx.config().profile_seeds; ++i) seeds.push_back(ctx.config().seed_base + 100 + i);
  const auto runs = sample_runs(rule, n, times, seeds, {2}, 16);
  const auto rho = integrate_rho(rule, 16, times.back(), 1e-4, times);
  const double tol = 3 * std::log(double(n)) / std::sqrt(double(n));
  double worst = 0;
  int worst_k = 0;
  double worst_t = 0;
  for (const auto& run : runs.snaps)
    for (const auto& s : run) {
      const auto j = rho.index_of(s.t);
      for (int k = 1; k <= 10; ++k) {
        const double d = std::abs(s.N[k] / double(n) - rho.rho(j, k));
        if (d > worst) std::tie(worst, worst_k, worst_t) = std::tuple(d, k, s.t);
      }
    }
  c.pass = worst <= tol;
  c.summary = "sup |N_k/n - rho_k| = " + format_fixed(worst, 3) + " (k=" + std::to_string(worst_k) + ", t=" +
              format_fixed(worst_t, 3) + "), bound " + format_fixed(tol, 3);
  c.detail = {{"sup", worst}, {"bound", tol}, {"k", worst_k}, {"t", worst_t}, {"n", n}, {"seeds", seeds}};
  return c;
}

inline CriterionResult criterion_criticality(AcceptanceContext& ctx) {
  auto c = make_result(7, "Criticality consistency", 300);
  c.pass = true;
  for (const TheoryEngine* th : {&ctx.er(), &ctx.bf()}) {
    const double ey = th->mean_y(th->t_c());
    c.pass = c.pass && std::abs(ey - 1) <= 1e-3;
    c.summary += th->rule().name() + " E Y=" + format_fixed(ey, 8) + " ";
    c.detail[th->rule().name()] = {{"t_c", th->t_c()}, {"mean_y", ey}};
  }
  return c;
}

inline CriterionResult criterion_two_round(AcceptanceContext& ctx) {
  auto c = make_result(8, "Two-round equivalence", 900);
  const auto rule = bohman_frieze_rule();
  const auto& th = ctx.bf();
  const auto window = CriticalWindow::for_rule(rule, th.t_c());
  const std::uint64_t n = ctx.config().equiv_n;
  const auto i0 = static_cast<std::uint64_t>(std::floor(window.t0 * double(n)));
  const auto i = static_cast<std::uint64_t>(std::floor(th.t_c() * double(n)));
  const auto null = equivalence_test(rule, n, i0, i, ctx.config().equiv_runs, ctx.config().equiv_seed);
  const auto bad = equivalence_test(rule, n, i0, i, ctx.config().equiv_runs, ctx.config().equiv_seed,
                                    [](ParameterList& s) { s.Q[{0, 2}] *= 2; });
  c.pass = null.test.p_value >= 0.01 && bad.test.p_value < 1e-3;
  c.summary = "p=" + format_fixed(null.test.p_value, 4) + " (dof " + std::to_string(null.test.dof) +
              "), corrupted p=" + format_fixed(bad.test.p_value, 3);
  c.detail = {{"null", to_json(null)}, {"corrupted", to_json(bad)}};
  return c;
}

inline CriterionResult criterion_supercritical(AcceptanceContext& ctx) {
  auto c = make_result(9, "Supercritical law of large numbers", 3600);
  std::vector<ReportRecord> recs;
  for (double eps : {0.03, 0.05, 0.1}) recs.push_back(supercritical_cell(ctx.er(), ctx.er_runs(), eps));
  for (double eps : {0.03, 0.05, 0.1}) recs.push_back(supercritical_cell(ctx.bf(), ctx.bf_runs(), eps));
  c.pass = detail::all_pass(recs);
  c.summary = detail::records_summary(recs);
  c.detail = detail::records_json(recs);
  return c;
}

inline CriterionResult criterion_subcritical(AcceptanceContext& ctx) {
  auto c = make_result(10, "Subcritical largest component", 1800);
  std::vector<ReportRecord> recs{subcritical_cell(ctx.er(), ctx.er_runs(), 0.05),
                                 subcritical_cell(ctx.bf(), ctx.bf_runs(), 0.05)};
  c.pass = detail::all_pass(recs);
  c.summary = detail::records_summary(recs);
  for (const auto& r : recs) c.summary += " ratio=" + format_fixed(r.cell["ratio"].get<double>(), 4);
  c.detail = detail::records_json(recs);
  return c;
}

inline CriterionResult criterion_profile(AcceptanceContext& ctx) {
  auto c = make_result(11, "Small-component profile", 1800);
  const auto recs = profile_cells(ctx.bf(), ctx.bf_runs(), 0.02);
  c.pass = detail::all_pass(recs);
  double worst = 0;
  int worst_k = 0;
  for (const auto& r : recs)
    if (r.rel_error > worst) std::tie(worst, worst_k) = std::tuple(r.rel_error, r.cell["k"].get<int>());
  c.summary = "bf t=t_c-0.02, k in [16,64]: " + std::to_string(recs.size()) + " sizes, worst rel err " +
              format_fixed(worst, 3) + " at k=" + std::to_string(worst_k);
  c.detail = detail::records_json(recs);
  return c;
}

inline CriterionResult criterion_critical_tail(AcceptanceContext& ctx) {
  auto c = make_result(12, "Critical tail", 1800);
  const auto recs = critical_tail_cells(ctx.bf(), ctx.bf_runs(), {16, 32, 64, 128});
  c.pass = detail::all_pass(recs);
  c.summary = "B=" + format_fixed(ctx.bf().critical_tail_constant(), 5) + ":";
  for (const auto& r : recs) {
    if (r.experiment == "critical-tail")
      c.summary += " k=" + r.cell["k"].dump() + " " + format_fixed(r.measured, 5);
    else
      c.summary += "; flatness " + format_fixed(r.measured, 3);
  }
  c.detail = detail::records_json(recs);
  return c;
}

inline CriterionResult criterion_susceptibility(AcceptanceContext& ctx) {
  auto c = make_result(13, "Subcritical susceptibility", 1800);
  const auto recs = susceptibility_cells(ctx.bf(), ctx.bf_runs(), {0.05, 0.1}, {2, 3});
  c.pass = detail::all_pass(recs);
  for (const auto& r : recs)
    c.summary += "r=" + r.cell["r"].dump() + " eps=" + format_fixed(r.cell["eps"], 2) + " rel " +
                 format_fixed(r.rel_error, 3) + "/" + format_fixed(r.tolerance, 3) + "; ";
  c.detail = detail::records_json(recs);
  return c;
}

inline CriterionResult criterion_combinatorics(AcceptanceContext&) {
  auto c = make_result(14, "Combinatorics", 60);
  const int p_er = detect_period(er4_rule(), 256).period;
  const int p_bf = detect_period(bohman_frieze_rule(), 256).period;
  const int p_even = detect_period(even_rule(), 256).period;
  std::vector<RuleSpec> rules{er4_rule(), bohman_frieze_rule(), even_rule(), no3_rule()};
  for (const auto& name : {"product", "sum"}) rules.push_back(*builtin_rule(name));
  const auto [traces, mismatch] = detail::brute_force_equivalence(rules, 8, 50, 12);
  c.pass = p_er == 1 && p_bf == 1 && p_even == 2 && mismatch.empty();
  c.summary = "periods er4=" + std::to_string(p_er) + " bf=" + std::to_string(p_bf) + " even=" +
              std::to_string(p_even) + "; " + std::to_string(traces) + " brute-force traces" +
              (mismatch.empty() ? " agree" : ", " + mismatch);
  c.detail = {{"period_er4", p_er}, {"period_bf", p_bf}, {"period_even", p_even}, {"traces", traces},
              {"mismatch", mismatch}};
  return c;
}

inline const std::vector<std::function<CriterionResult(AcceptanceContext&)>>& criteria() {
  static const std::vector<std::function<CriterionResult(AcceptanceContext&)>> v{
      criterion_er_critical_time, criterion_er_survival,   criterion_er_tail,       criterion_er_constants,
      criterion_cross_engine,     criterion_sim_vs_ode,    criterion_criticality,   criterion_two_round,
      criterion_supercritical,    criterion_subcritical,   criterion_profile,       criterion_critical_tail,
      criterion_susceptibility,   criterion_combinatorics};
  return v;
}

inline const std::map<std::string, std::vector<int>>& suites() {
  static const std::map<std::string, std::vector<int>> v{
      {"er-suite", {1, 2, 3, 4}},
      {"theory", {1, 2, 3, 4, 5, 7}},
      {"simulation", {6, 8, 9, 10, 11, 12, 13}},
      {"combinatorics", {14}},
      {"all", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14}},
  };
  return v;
}

// Runs one criterion; errors become a failing result. Runtime counts against the limit.
inline CriterionResult run_criterion(int id, AcceptanceContext& ctx) {
  if (id < 1 || id > static_cast<int>(criteria().size()))
    throw Error(ErrorKind::invalid_config, "no acceptance criterion " + std::to_string(id));
  const auto start = std::chrono::steady_clock::now();
  CriterionResult c;
  try {
    c = criteria()[static_cast<std::size_t>(id - 1)](ctx);
  } catch (const std::exception& e) {
    c.id = id;
    c.title = "criterion " + std::to_string(id);
    c.pass = false;
    c.summary = std::string("error: ") + e.what();
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (c.limit > 0 && c.seconds > c.limit) {
    c.pass = false;
    c.summary += " [over time limit " + format_fixed(c.limit, 4) + " s]";
  }
  return c;
}

inline std::string criterion_line(const CriterionResult& c) {
  char head[96];
  std::snprintf(head, sizeof head, "%s %2d  %-36s", c.pass ? "PASS" : "FAIL", c.id, c.title.c_str());
  return std::string(head) + c.summary + " (" + format_fixed(c.seconds, 3) + " s)";
}

}  // namespace bsrlab
