#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bsrlab/process_sim.hpp"
#include "bsrlab/theory.hpp"

namespace bsrlab {

inline constexpr const char* kVersion = "0.1.0";

// Worker count from BSRLAB_THREADS, else the hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("BSRLAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs f(0..count-1) on up to worker_count() threads; the first exception is rethrown.
template <class F>
void parallel_for(std::size_t count, F&& f) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorKind::invalid_config, "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Half the range divided by the median.
inline double relative_spread(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return 0.5 * (*hi - *lo) / std::abs(median(v));
}

// ---------------------------------------------------------------------------
// Seeded runs shared across cells

struct SeedRuns {
  std::string rule;
  std::uint64_t n = 0;
  std::vector<double> times;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<SnapshotStats>> snaps;  // [seed][time]

  std::size_t time_index(double t) const {
    for (std::size_t i = 0; i < times.size(); ++i)
      if (std::abs(times[i] - t) < 1e-9) return i;
    throw Error(ErrorKind::invalid_config, "time " + format_double(t) + " was not sampled");
  }

  template <class F>
  std::vector<double> across_seeds(double t, F&& f) const {
    const std::size_t i = time_index(t);
    std::vector<double> out;
    for (const auto& run : snaps) out.push_back(f(run[i]));
    return out;
  }
};

inline SeedRuns sample_runs(const RuleSpec& rule, std::uint64_t n, std::vector<double> times,
                            const std::vector<std::uint64_t>& seeds, std::vector<int> sr_orders = {2},
                            int tracked_k_max = 256) {
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
              times.end());
  SeedRuns out;
  out.rule = rule.name();
  out.n = n;
  out.times = times;
  out.seeds = seeds;
  out.snaps.resize(seeds.size());
  if (times.empty()) return out;
  parallel_for(seeds.size(), [&](std::size_t i) {
    RunConfig c;
    c.n = n;
    c.rule = rule;
    c.t_max = times.back();
    c.seed = seeds[i];
    c.snapshot_times = times;
    c.tracked_k_max = tracked_k_max;
    c.track_sr_orders = sr_orders;
    out.snaps[i] = run(c);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Records

struct ReportRecord {
  std::string experiment;
  nlohmann::json cell = nlohmann::json::object();
  double measured = std::numeric_limits<double>::quiet_NaN();
  double predicted = std::numeric_limits<double>::quiet_NaN();
  std::string formula;
  double rel_error = std::numeric_limits<double>::quiet_NaN();
  double tolerance = std::numeric_limits<double>::quiet_NaN();
  bool pass = false;
  bool skipped = false;
  std::string note;
  double runtime = 0.0;
  std::vector<std::uint64_t> seeds;
  std::string version = kVersion;
};

inline nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

inline nlohmann::json to_json(const ReportRecord& r) {
  return {{"experiment", r.experiment}, {"cell", r.cell},
          {"measured", finite_or_null(r.measured)}, {"predicted", finite_or_null(r.predicted)},
          {"formula", r.formula}, {"rel_error", finite_or_null(r.rel_error)},
          {"tolerance", finite_or_null(r.tolerance)}, {"pass", r.pass},
          {"skipped", r.skipped}, {"note", r.note},
          {"runtime", r.runtime}, {"seeds", r.seeds},
          {"version", r.version}};
}

inline void write_records_csv(std::ostream& os, const std::vector<ReportRecord>& recs) {
  os << "experiment,cell,measured,predicted,formula,rel_error,tolerance,pass,skipped,runtime,note\n";
  auto quote = [](std::string s) {
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
  };
  for (const auto& r : recs)
    os << r.experiment << ',' << quote(r.cell.dump()) << ',' << format_double(r.measured) << ','
       << format_double(r.predicted) << ',' << quote(r.formula) << ',' << format_double(r.rel_error) << ','
       << format_double(r.tolerance) << ',' << (r.pass ? 1 : 0) << ',' << (r.skipped ? 1 : 0) << ','
       << format_double(r.runtime) << ',' << quote(r.note) << '\n';
}

// ---------------------------------------------------------------------------
// Cell evaluators. Each compares medians over the seeds of `runs` with the
// theory engine's prediction at the same time.

namespace detail {

inline ReportRecord base_record(const std::string& experiment, const TheoryEngine& th, const SeedRuns& runs,
                                double eps) {
  ReportRecord r;
  r.experiment = experiment;
  r.cell = {{"rule", th.rule().name()}, {"n", runs.n}, {"eps", eps}, {"t_c", th.t_c()}};
  r.seeds = runs.seeds;
  return r;
}

inline double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

// Median L1/n at t_c + eps against the survival probability; L2/L1 must stay small.
inline ReportRecord supercritical_cell(const TheoryEngine& th, const SeedRuns& runs, double eps, double tol = 0.05,
                                       double max_l2_ratio = 0.1) {
  const auto start = std::chrono::steady_clock::now();
  const double t = th.t_c() + eps;
  auto r = detail::base_record("supercritical", th, runs, eps);
  const double n = static_cast<double>(runs.n);
  r.measured = median(runs.across_seeds(t, [&](const SnapshotStats& s) { return s.L1 / n; }));
  const double l2 = median(runs.across_seeds(t, [](const SnapshotStats& s) {
    return static_cast<double>(s.L2) / static_cast<double>(s.L1);
  }));
  r.predicted = th.survival(t).rho;
  r.formula = "rho(t_c+eps)";
  r.rel_error = std::abs(r.measured / r.predicted - 1);
  r.tolerance = tol;
  r.cell["median_L2_over_L1"] = l2;
  r.pass = r.rel_error <= tol && l2 <= max_l2_ratio;
  r.runtime = detail::elapsed(start);
  return r;
}

inline double subcritical_l1_prediction(double psi, double eps, double n) {
  const double x = std::log(eps * eps * eps * n);
  return (x - 2.5 * std::log(x)) / psi;
}

// Median of the largest size when component counts are Poisson with
// mean n theta k^{-5/2} e^{-psi k} on the period lattice. Diagnostic only.
inline double poisson_max_median(double theta, double psi, int period, double n) {
  const double target = std::log(2.0);
  const int k_max = static_cast<int>(std::ceil(60 / psi)) + period;
  double tail = 0;
  for (int k = k_max - k_max % period; k > period; k -= period) {
    tail += n * theta * std::pow(k, -2.5) * std::exp(-psi * k);
    if (tail > target) return k;
  }
  return period;
}

// Median L1 at t_c - eps against psi^{-1}(log(eps^3 n) - 5/2 log log(eps^3 n)).
inline ReportRecord subcritical_cell(const TheoryEngine& th, const SeedRuns& runs, double eps, double lo = 0.8,
                                     double hi = 1.25) {
  const auto start = std::chrono::steady_clock::now();
  const double t = th.t_c() - eps;
  auto r = detail::base_record("subcritical", th, runs, eps);
  r.measured = median(runs.across_seeds(t, [](const SnapshotStats& s) { return static_cast<double>(s.L1); }));
  const double psi = th.tail(t).psi;
  r.predicted = subcritical_l1_prediction(psi, eps, static_cast<double>(runs.n));
  r.formula = "(log(eps^3 n) - 2.5 log log(eps^3 n)) / psi(t_c-eps)";
  r.rel_error = std::abs(r.measured / r.predicted - 1);
  r.cell["psi"] = psi;
  r.cell["poisson_max_median"] =
      poisson_max_median(th.tail(t).theta, psi, th.period(), static_cast<double>(runs.n));
  r.cell["ratio"] = r.measured / r.predicted;
  r.cell["band"] = {lo, hi};
  r.pass = r.measured >= lo * r.predicted && r.measured <= hi * r.predicted;
  r.runtime = detail::elapsed(start);
  return r;
}

// Median N_k/n at t_c - eps against theta e^{-psi k} k^{-3/2}, one record per reachable k.
inline std::vector<ReportRecord> profile_cells(const TheoryEngine& th, const SeedRuns& runs, double eps, int k_lo = 16,
                                               int k_hi = 64, double tol = 0.15) {
  const auto start = std::chrono::steady_clock::now();
  const double t = th.t_c() - eps;
  const auto fit = th.tail(t);
  const auto reach = reachable_sizes(th.rule(), std::max(k_hi, 4 * (th.rule().cutoff() + 1)));
  const double n = static_cast<double>(runs.n);
  std::vector<ReportRecord> out;
  for (int k = k_lo; k <= k_hi; ++k) {
    if (!reach.contains(k)) continue;
    auto r = detail::base_record("profile", th, runs, eps);
    r.cell["k"] = k;
    r.measured = median(runs.across_seeds(t, [&](const SnapshotStats& s) { return s.N.at(k) / n; }));
    r.predicted = fit.theta * std::exp(-fit.psi * k) * std::pow(k, -1.5);
    r.formula = "theta(t) exp(-psi(t) k) k^-1.5";
    r.rel_error = std::abs(r.measured / r.predicted - 1);
    r.tolerance = tol;
    r.pass = r.rel_error <= tol;
    out.push_back(std::move(r));
  }
  const double dt = detail::elapsed(start);
  for (auto& r : out) r.runtime = dt / static_cast<double>(out.size());
  return out;
}

// Median N_{>=k}(t_c n) k^{1/2} / n against B = 2 theta(t_c)/p, one record per k,
// then a record for the spread of the measured values around their mean.
inline std::vector<ReportRecord> critical_tail_cells(const TheoryEngine& th, const SeedRuns& runs,
                                                     const std::vector<int>& ks, double tol = 0.15) {
  const auto start = std::chrono::steady_clock::now();
  const double B = th.critical_tail_constant();
  const double n = static_cast<double>(runs.n);
  std::vector<ReportRecord> out;
  std::vector<double> values;
  for (int k : ks) {
    auto r = detail::base_record("critical-tail", th, runs, 0.0);
    r.cell["k"] = k;
    r.measured = median(runs.across_seeds(
        th.t_c(), [&](const SnapshotStats& s) { return s.N_at_least(static_cast<std::size_t>(k)) * std::sqrt(k) / n; }));
    r.predicted = B;
    r.formula = "B = 2 theta(t_c) / p";
    r.rel_error = std::abs(r.measured / B - 1);
    r.tolerance = tol;
    r.pass = r.rel_error <= tol;
    values.push_back(r.measured);
    out.push_back(std::move(r));
  }
  auto flat = detail::base_record("critical-tail-flatness", th, runs, 0.0);
  double mean = 0;
  for (double v : values) mean += v / static_cast<double>(values.size());
  double worst = 0;
  for (double v : values) worst = std::max(worst, std::abs(v / mean - 1));
  flat.cell["ks"] = ks;
  flat.measured = worst;
  flat.predicted = 0;
  flat.formula = "max_k |c_k / mean(c) - 1|";
  flat.rel_error = worst;
  flat.tolerance = tol;
  flat.pass = worst <= tol;
  out.push_back(std::move(flat));
  const double dt = detail::elapsed(start);
  for (auto& r : out) r.runtime = dt / static_cast<double>(out.size());
  return out;
}

// Median S_r at t_c - eps against B_r eps^{3-2r}. The band is
// A'(eps + (eps^3 n)^{-1/4}) with A' set to twice the largest observed spread,
// where the spread of a cell is the offset of the exact n -> infinity value
// S_r(t_c - eps) from B_r eps^{3-2r} plus the inter-seed half range.
inline std::vector<ReportRecord> susceptibility_cells(const TheoryEngine& th, const SeedRuns& runs,
                                                      const std::vector<double>& eps_list,
                                                      const std::vector<int>& orders) {
  const auto start = std::chrono::steady_clock::now();
  const auto table = th.constants(orders);
  const double n = static_cast<double>(runs.n);
  struct Cell {
    double eps;
    int r;
    double measured, predicted, exact, seed_spread, scale;
  };
  std::vector<Cell> cells;
  for (double eps : eps_list) {
    const double t = th.t_c() - eps;
    const auto pts = th.points(t);
    const auto fit = th.tail(t);
    for (int r : orders) {
      const auto samples = runs.across_seeds(t, [&](const SnapshotStats& s) {
        for (std::size_t i = 0; i < s.sr_orders.size(); ++i)
          if (s.sr_orders[i] == r) return s.S[i];
        throw Error(ErrorKind::invalid_config, "S_" + std::to_string(r) + " was not tracked");
      });
      Cell c{eps, r, median(samples), table.at(r) * std::pow(eps, 3 - 2 * r), moments(pts, r, fit).value,
             relative_spread(samples), eps + std::pow(eps * eps * eps * n, -0.25)};
      cells.push_back(c);
    }
  }
  std::map<int, double> a_prime;
  for (const auto& c : cells) {
    const double spread = std::abs(c.exact / c.predicted - 1) + c.seed_spread;
    a_prime[c.r] = std::max(a_prime[c.r], 2 * spread / c.scale);
  }
  std::vector<ReportRecord> out;
  for (const auto& c : cells) {
    auto r = detail::base_record("susceptibility", th, runs, c.eps);
    r.cell["r"] = c.r;
    r.cell["A_prime"] = a_prime[c.r];
    r.cell["exact_limit"] = c.exact;
    r.cell["seed_spread"] = c.seed_spread;
    r.measured = c.measured;
    r.predicted = c.predicted;
    r.formula = "B_r eps^(3-2r)";
    r.rel_error = std::abs(c.measured / c.predicted - 1);
    r.tolerance = a_prime[c.r] * c.scale;
    r.pass = r.rel_error <= r.tolerance;
    out.push_back(std::move(r));
  }
  const double dt = detail::elapsed(start);
  for (auto& r : out) r.runtime = dt / static_cast<double>(out.size());
  return out;
}

// ---------------------------------------------------------------------------
// Plans

struct ExperimentPlan {
  std::string id;  // supercritical | subcritical | profile | critical-tail | susceptibility
  RuleSpec rule;
  std::vector<std::uint64_t> n_grid;
  std::vector<double> eps_grid;
  int seeds = 10;
  std::uint64_t seed_base = 1;
  double omega_min = 50;
  std::vector<int> ks{16, 32, 64, 128};
  std::vector<int> orders{2, 3};

  static const std::vector<std::string>& ids() {
    static const std::vector<std::string> v{"supercritical", "subcritical", "profile", "critical-tail",
                                            "susceptibility"};
    return v;
  }
  std::vector<std::uint64_t> seed_list() const {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < seeds; ++i) out.push_back(seed_base + static_cast<std::uint64_t>(i));
    return out;
  }
  bool uses_eps() const { return id != "critical-tail"; }
  double sign() const { return id == "supercritical" ? 1.0 : -1.0; }

  void validate() const {
    if (std::find(ids().begin(), ids().end(), id) == ids().end())
      throw Error(ErrorKind::invalid_config, "unknown experiment '" + id + "'");
    if (seeds < 1) throw Error(ErrorKind::invalid_config, "seeds must be at least 1");
    for (double e : eps_grid)
      if (!(e > 0)) throw Error(ErrorKind::invalid_config, "eps must be positive");
  }
};

inline TheoryOptions experiment_theory_options(const std::vector<double>& offsets) {
  TheoryOptions o;
  double widest = 0;
  for (double d : offsets) widest = std::max(widest, std::abs(d));
  o.sigma = std::max(0.12, widest + 0.02);
  o.anchor_offsets = offsets;
  return o;
}

inline std::vector<ReportRecord> run_experiment(const ExperimentPlan& plan, const TheoryEngine& th) {
  plan.validate();
  std::vector<ReportRecord> out;
  if (plan.n_grid.empty() || (plan.uses_eps() && plan.eps_grid.empty())) return out;
  const auto seeds = plan.seed_list();
  for (std::uint64_t n : plan.n_grid) {
    std::vector<double> eps_ok;
    for (double eps : plan.eps_grid) {
      if (!plan.uses_eps()) break;
      if (eps * eps * eps * static_cast<double>(n) < plan.omega_min) {
        ReportRecord r;
        r.experiment = plan.id;
        r.cell = {{"rule", plan.rule.name()}, {"n", n}, {"eps", eps}};
        r.skipped = true;
        r.note = "eps^3 n below omega_min=" + format_double(plan.omega_min);
        r.seeds = seeds;
        out.push_back(r);
      } else {
        eps_ok.push_back(eps);
      }
    }
    if (plan.uses_eps() && eps_ok.empty()) continue;
    std::vector<double> times;
    if (plan.uses_eps())
      for (double eps : eps_ok) times.push_back(th.t_c() + plan.sign() * eps);
    else
      times.push_back(th.t_c());
    std::vector<int> sr{2};
    if (plan.id == "susceptibility") sr = plan.orders;
    const auto runs = sample_runs(plan.rule, n, times, seeds, sr);
    auto append = [&](std::vector<ReportRecord> v) { out.insert(out.end(), v.begin(), v.end()); };
    if (plan.id == "supercritical")
      for (double eps : eps_ok) out.push_back(supercritical_cell(th, runs, eps));
    else if (plan.id == "subcritical")
      for (double eps : eps_ok) out.push_back(subcritical_cell(th, runs, eps));
    else if (plan.id == "profile")
      for (double eps : eps_ok) append(profile_cells(th, runs, eps));
    else if (plan.id == "critical-tail")
      append(critical_tail_cells(th, runs, plan.ks));
    else
      append(susceptibility_cells(th, runs, eps_ok, plan.orders));
  }
  return out;
}

inline std::vector<ReportRecord> run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  if (plan.n_grid.empty() || (plan.uses_eps() && plan.eps_grid.empty())) return {};
  std::vector<double> offsets;
  for (double e : plan.eps_grid) offsets.push_back(plan.sign() * e);
  const TheoryEngine th(plan.rule, experiment_theory_options(offsets));
  return run_experiment(plan, th);
}

// ---------------------------------------------------------------------------
// Figure data: median L1(tn)/n per rule.

struct FigureCurves {
  std::uint64_t n = 0;
  std::vector<double> t;
  std::vector<std::string> rules;
  std::vector<std::vector<double>> l1;  // [rule][time]
};

inline FigureCurves figure_curves(const std::vector<RuleSpec>& rules, std::uint64_t n, std::vector<double> t_grid,
                                  const std::vector<std::uint64_t>& seeds) {
  std::sort(t_grid.begin(), t_grid.end());
  FigureCurves out;
  out.n = n;
  out.t = t_grid;
  for (const auto& rule : rules) {
    const auto runs = sample_runs(rule, n, t_grid, seeds, {2}, 1);
    out.t = runs.times;
    std::vector<double> curve;
    for (double t : runs.times)
      curve.push_back(median(runs.across_seeds(t, [&](const SnapshotStats& s) { return s.L1 / double(n); })));
    out.rules.push_back(rule.name());
    out.l1.push_back(std::move(curve));
  }
  return out;
}

inline void write_figure_csv(std::ostream& os, const FigureCurves& f) {
  os << 't';
  for (const auto& r : f.rules) os << ',' << r;
  os << '\n';
  for (std::size_t i = 0; i < f.t.size(); ++i) {
    os << format_double(f.t[i]);
    for (const auto& c : f.l1) os << ',' << format_double(c[i]);
    os << '\n';
  }
}

}  // namespace bsrlab
