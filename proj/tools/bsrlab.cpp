// bsrlab: command-line front end for simulation, theory and verification.
// Exit codes: 0 success, 1 acceptance failure or runtime error, 2 usage error.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bsrlab/acceptance.hpp"
#include "bsrlab/exposure_lab.hpp"
#include "bsrlab/experiments.hpp"
#include "bsrlab/theory.hpp"

namespace {

using namespace bsrlab;
using nlohmann::json;

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::string rule = "bf";
  double n = 1e6;
  double tmax = 1.0;
  std::uint64_t seed = 1;
  int seeds = 10;
  std::vector<double> eps;
  double t = std::nan("");
  int kmax = 0;
  int rmax = 0;
  double h = 1e-4;
  double dt = 0.05;
  double sigma = 0.0;
  std::string out;
  std::string format;
  std::vector<int> orders{2, 3};
  std::vector<int> sr{2};
  int runs = 200;
  double t0 = std::nan("");
  std::string list;
  bool poissonized = false;
  bool corrupt = false;
  bool curvature = false;
  std::string experiment;
  std::vector<std::string> rules;
  std::string suite;
  std::size_t every = 1;
};

std::uint64_t as_count(double x, const char* what) {
  if (!(x >= 1) || x != std::floor(x) || x > 1e19)
    throw Error(ErrorKind::invalid_config, std::string(what) + " must be a positive integer");
  return static_cast<std::uint64_t>(x);
}

void emit(const Options& o, const std::string& name, const std::string& content) {
  if (o.out.empty()) {
    std::cout << content;
    return;
  }
  std::filesystem::create_directories(o.out);
  std::ofstream f(std::filesystem::path(o.out) / name, std::ios::binary);
  if (!f) throw Error(ErrorKind::invalid_config, "cannot write to " + o.out);
  f << content;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string format_or(const Options& o, const std::string& fallback) {
  const std::string f = o.format.empty() ? fallback : o.format;
  if (f != "csv" && f != "json") throw Error(ErrorKind::invalid_config, "format must be csv or json");
  return f;
}

// Theory engine whose grid contains the requested time.
std::unique_ptr<TheoryEngine> make_engine(const Options& o, double* t_out) {
  TheoryOptions opt;
  opt.h = o.h;
  if (o.kmax > 0) opt.series_order = std::min(o.kmax, opt.rho_k_max);
  double offset = 0;
  if (!o.eps.empty()) offset = o.eps.front();
  opt.sigma = o.sigma > 0 ? o.sigma : std::max(0.12, std::abs(offset) + 0.02);
  if (std::isnan(o.t)) opt.anchor_offsets = {offset};
  else opt.anchors = {o.t};
  auto th = std::make_unique<TheoryEngine>(resolve_rule(o.rule), opt);
  *t_out = std::isnan(o.t) ? th->t_c() + offset : o.t;
  return th;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Options& o) {
  RunConfig c;
  c.n = as_count(o.n, "n");
  c.rule = resolve_rule(o.rule);
  c.t_max = o.tmax;
  c.seed = o.seed;
  if (o.kmax > 0) c.tracked_k_max = o.kmax;
  c.track_sr_orders = o.sr;
  if (!(o.dt > 0)) throw Error(ErrorKind::invalid_config, "dt must be positive");
  const auto steps = static_cast<long>(std::floor(o.tmax / o.dt + 1e-9));
  for (long j = 0; j <= steps; ++j) c.snapshot_times.push_back(std::min(o.tmax, o.dt * static_cast<double>(j)));
  const auto snaps = run(c);
  if (format_or(o, "csv") == "csv") {
    std::ostringstream os;
    write_snapshot_csv(os, snaps);
    emit(o, "snapshots.csv", os.str());
    if (!o.out.empty()) emit(o, "run.json", dump(run_config_json(c)));
    return 0;
  }
  json rows = json::array();
  for (const auto& s : snaps) {
    json S = json::object();
    for (std::size_t i = 0; i < s.sr_orders.size(); ++i) S["S" + std::to_string(s.sr_orders[i])] = s.S[i];
    rows.push_back({{"t", s.t}, {"L1", s.L1}, {"L2", s.L2}, {"Nomega", s.N_omega}, {"S", S},
                    {"N", std::vector<std::uint64_t>(s.N.begin() + 1, s.N.end())}});
  }
  emit(o, "snapshots.json", dump({{"config", run_config_json(c)}, {"snapshots", rows}}));
  return 0;
}

int cmd_ode_tc(const Options& o) {
  const auto curve = estimate_tc(resolve_rule(o.rule), 1e8, o.h);
  json j{{"rule", o.rule}, {"tc", curve.t_c}, {"err", curve.err}, {"S_max", curve.s_max}, {"h", curve.h}};
  if (format_or(o, "json") == "json") {
    emit(o, "tc.json", dump(j));
  } else {
    std::ostringstream os;
    os << "t,s2\n";
    for (std::size_t i = 0; i < curve.t.size(); i += std::max<std::size_t>(o.every, 1))
      os << format_double(curve.t[i]) << ',' << format_double(curve.s2[i]) << '\n';
    emit(o, "s2.csv", os.str());
  }
  return 0;
}

int cmd_ode_rho(const Options& o) {
  const auto sol = integrate_rho(resolve_rule(o.rule), o.kmax > 0 ? o.kmax : 64, o.tmax, o.h);
  std::ostringstream os;
  write_rho_csv(os, sol, o.every);
  emit(o, "rho.csv", os.str());
  return 0;
}

int cmd_ode_q(const Options& o) {
  const auto rule = resolve_rule(o.rule);
  const auto curve = estimate_tc(rule, 1e8, o.h);
  const auto window = o.sigma > 0 ? CriticalWindow::make(curve.t_c, o.sigma) : CriticalWindow::for_rule(rule, curve.t_c);
  const auto rho = integrate_rho(rule, 256, window.t1, o.h, {window.t0, window.t_c});
  const auto q = integrate_q(rule, window, rho, o.kmax > 0 ? o.kmax : 64, o.rmax > 0 ? o.rmax : 16, o.h, {window.t_c});
  std::ostringstream os;
  write_q_csv(os, q, o.every);
  emit(o, "q.csv", os.str());
  return 0;
}

int cmd_bp_survival(const Options& o) {
  double t = 0;
  const auto engine = make_engine(o, &t);
  const TheoryEngine& th = *engine;
  const auto s = th.survival(t);
  emit(o, "survival.json",
       dump({{"rule", o.rule}, {"t", s.t}, {"t_c", th.t_c()}, {"rho1", s.rho1}, {"rho", s.rho}, {"mean_y", s.mean_y},
             {"iterations", s.iterations}, {"residual", s.residual}}));
  return 0;
}

int cmd_bp_pmf(const Options& o) {
  double t = 0;
  const auto engine = make_engine(o, &t);
  const TheoryEngine& th = *engine;
  const auto p = th.points(t, o.kmax > 0 ? o.kmax : 0);
  if (format_or(o, "csv") == "csv") {
    std::ostringstream os;
    os << "t,k,p_k\n";
    for (int k = 1; k <= p.k_max(); ++k) os << format_double(t) << ',' << k << ',' << format_double(p.p[k]) << '\n';
    emit(o, "pmf.csv", os.str());
  } else {
    emit(o, "pmf.json",
         dump({{"rule", o.rule}, {"t", t}, {"period", p.period}, {"rho", p.rho}, {"defect", p.defect},
               {"p", std::vector<double>(p.p.begin() + 1, p.p.end())}}));
  }
  return 0;
}

int cmd_bp_tail(const Options& o) {
  double t = 0;
  const auto engine = make_engine(o, &t);
  const TheoryEngine& th = *engine;
  if (o.curvature) {
    const auto& c = th.curvature();
    emit(o, "curvature.json",
         dump({{"rule", o.rule}, {"t_c", c.t_c}, {"psi", c.psi_tc}, {"psi_slope", c.psi_slope}, {"psi_pp", c.psi_pp},
               {"theta", c.theta}, {"residual", c.residual}, {"B", th.critical_tail_constant()}}));
    return 0;
  }
  const auto f = th.tail(t);
  const auto p = th.points(t);
  emit(o, "tail.json",
       dump({{"rule", o.rule}, {"t", t}, {"psi", f.psi}, {"theta", f.theta}, {"residual", f.residual},
             {"k_lo", f.k_lo}, {"k_hi", f.k_hi}, {"defect", p.defect}, {"rho", p.rho}}));
  return 0;
}

int cmd_bp_moments(const Options& o) {
  double t = 0;
  const auto engine = make_engine(o, &t);
  const TheoryEngine& th = *engine;
  const auto table = th.constants(o.orders);
  json rows = json::array();
  const auto p = th.points(t);
  const auto f = th.tail(t);
  for (int r : o.orders) {
    json row{{"r", r}, {"B", table.at(r)}};
    if (t < th.t_c()) {
      const auto m = moments(p, r, f);
      row["moment"] = m.value;
      row["series"] = m.sum;
      row["tail"] = m.tail;
      row["scaling"] = table.at(r) * std::pow(th.t_c() - t, 3 - 2 * r);
    }
    rows.push_back(row);
  }
  emit(o, "moments.json",
       dump({{"rule", o.rule}, {"t", t}, {"t_c", th.t_c()}, {"theta_tc", table.theta}, {"psi_pp", table.psi_pp},
             {"defect", p.defect}, {"moments", rows}}));
  return 0;
}

std::pair<std::uint64_t, std::uint64_t> exposure_steps(const Options& o, const RuleSpec& rule, std::uint64_t n) {
  const auto curve = estimate_tc(rule, 1e8, o.h);
  const double t0 = std::isnan(o.t0) ? CriticalWindow::for_rule(rule, curve.t_c).t0 : o.t0;
  const double t = std::isnan(o.t) ? curve.t_c : o.t;
  return {static_cast<std::uint64_t>(std::floor(t0 * double(n))), static_cast<std::uint64_t>(std::floor(t * double(n)))};
}

int cmd_exposure_track(const Options& o) {
  RunConfig c;
  c.n = as_count(o.n, "n");
  c.rule = resolve_rule(o.rule);
  c.seed = o.seed;
  const auto [i0, i] = exposure_steps(o, c.rule, c.n);
  c.t_max = static_cast<double>(i) / static_cast<double>(c.n) + 1.0 / static_cast<double>(c.n);
  const auto lists = track_exposure(c, i0, i, {i});
  auto j = to_json(lists.at(i));
  j["step"] = i;
  j["i0"] = i0;
  j["rule"] = c.rule.name();
  j["seed"] = c.seed;
  emit(o, "parameter_list.json", dump(j));
  return 0;
}

int cmd_exposure_sample(const Options& o) {
  std::ifstream in(o.list);
  if (!in) throw Error(ErrorKind::parse, "cannot open parameter list " + o.list);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, o.list + ": " + e.what());
  }
  const auto s = parameter_list_from_json(doc);
  CounterRng rng(o.seed, 0);
  const auto sizes = sample_graph(s, o.poissonized, rng);
  const auto prof = profile_from_sizes(sizes);
  emit(o, "sample.json",
       dump({{"vertices", s.order()}, {"components", sizes.size()}, {"L1", prof.L1},
             {"largest", std::vector<std::uint64_t>(sizes.begin(), sizes.begin() + std::min<std::size_t>(10, sizes.size()))},
             {"component_counts", prof.counts}, {"poissonized", o.poissonized}, {"seed", o.seed}}));
  return 0;
}

int cmd_exposure_equiv(const Options& o) {
  const auto rule = resolve_rule(o.rule);
  const auto n = as_count(o.n, "n");
  const auto [i0, i] = exposure_steps(o, rule, n);
  std::function<void(ParameterList&)> corrupt;
  if (o.corrupt) corrupt = [](ParameterList& s) { s.Q[{0, 2}] *= 2; };
  const auto rep = equivalence_test(rule, n, i0, i, o.runs, o.seed, corrupt);
  if (rep.power_warning) std::cerr << "warning: fewer than 50 runs; the test has little power\n";
  auto j = to_json(rep);
  j["i0"] = i0;
  j["corrupted"] = o.corrupt;
  emit(o, "equivalence.json", dump(j));
  return 0;
}

int cmd_verify(const Options& o) {
  std::vector<int> ids;
  if (suites().count(o.suite)) {
    ids = suites().at(o.suite);
  } else if (!o.suite.empty() && o.suite.find_first_not_of("0123456789") == std::string::npos) {
    ids = {std::stoi(o.suite)};
    if (ids[0] < 1 || ids[0] > static_cast<int>(criteria().size()))
      throw Error(ErrorKind::invalid_config, "no criterion " + o.suite);
  } else {
    std::string names;
    for (const auto& [k, v] : suites()) names += " " + k;
    throw Error(ErrorKind::invalid_config, "unknown suite '" + o.suite + "'; choose one of:" + names + " or 1-14");
  }
  AcceptanceContext ctx;
  json report{{"suite", o.suite}, {"version", kVersion}, {"criteria", json::array()}};
  bool ok = true;
  for (int id : ids) {
    const auto c = run_criterion(id, ctx);
    std::cerr << criterion_line(c) << std::endl;
    report["criteria"].push_back(to_json(c));
    ok = ok && c.pass;
  }
  report["pass"] = ok;
  emit(o, "verify.json", dump(report));
  return ok ? 0 : kExitFail;
}

int cmd_report(const Options& o) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < o.seeds; ++i) seeds.push_back(o.seed + static_cast<std::uint64_t>(i));
  if (o.experiment == "figure") {
    std::vector<RuleSpec> rules;
    for (const auto& r : o.rules.empty() ? std::vector<std::string>{"er4", "bf", "product"} : o.rules)
      rules.push_back(resolve_rule(r));
    if (!(o.dt > 0)) throw Error(ErrorKind::invalid_config, "dt must be positive");
    std::vector<double> grid;
    for (long j = 0; o.dt * static_cast<double>(j) <= o.tmax + 1e-12; ++j) grid.push_back(o.dt * static_cast<double>(j));
    const auto f = figure_curves(rules, as_count(o.n, "n"), grid, seeds);
    std::ostringstream os;
    write_figure_csv(os, f);
    emit(o, "figure.csv", os.str());
    return 0;
  }
  ExperimentPlan plan;
  plan.id = o.experiment;
  plan.rule = resolve_rule(o.rule);
  plan.n_grid = {as_count(o.n, "n")};
  plan.eps_grid = o.eps;
  plan.seeds = o.seeds;
  plan.seed_base = o.seed;
  plan.orders = o.orders;
  const auto recs = run_experiment(plan);
  bool ok = true;
  for (const auto& r : recs) {
    if (r.skipped) std::cerr << "warning: skipped " << r.cell.dump() << ": " << r.note << '\n';
    else ok = ok && r.pass;
  }
  if (format_or(o, "json") == "json") {
    json a = json::array();
    for (const auto& r : recs) a.push_back(to_json(r));
    emit(o, "report.json", dump(a));
  } else {
    std::ostringstream os;
    write_records_csv(os, recs);
    emit(o, "report.csv", os.str());
  }
  return ok ? 0 : kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bsrlab: bounded-size rule processes, their ODE and branching-process theory, and checks"};
  app.set_help_flag("--help", "print help and exit");
  app.require_subcommand(1);
  Options o;
  int (*action)(const Options&) = nullptr;

  auto rule_opt = [&](CLI::App* c) { c->add_option("--rule", o.rule, "builtin name (er4, bf, even, no3, product, sum) or rule file"); };
  auto out_opts = [&](CLI::App* c) {
    c->add_option("--out", o.out, "output directory (default: stdout)");
    c->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  };
  auto time_opts = [&](CLI::App* c) {
    c->add_option("--eps", o.eps, "offset from t_c (t = t_c + eps)")->expected(1);
    c->add_option("--t", o.t, "absolute time");
    c->add_option("--h", o.h, "ODE step");
    c->add_option("--sigma", o.sigma, "half-width of the working window");
    c->add_option("--kmax", o.kmax, "series order");
  };

  auto* sim = app.add_subcommand("simulate", "simulate one run and emit snapshots");
  rule_opt(sim);
  sim->add_option("--n", o.n, "vertices");
  sim->add_option("--tmax", o.tmax, "final time (steps / n)");
  sim->add_option("--seed", o.seed, "seed");
  sim->add_option("--dt", o.dt, "snapshot spacing");
  sim->add_option("--kmax", o.kmax, "largest tracked component size");
  sim->add_option("--sr", o.sr, "tracked susceptibility orders")->delimiter(',');
  out_opts(sim);
  sim->callback([&] { action = cmd_simulate; });

  auto* ode = app.add_subcommand("ode", "deterministic approximations");
  ode->require_subcommand(1);
  auto* tc = ode->add_subcommand("tc", "critical time from the susceptibility blowup");
  rule_opt(tc);
  tc->add_option("--h", o.h, "ODE step");
  tc->add_option("--every", o.every, "row stride for csv");
  out_opts(tc);
  tc->callback([&] { action = cmd_ode_tc; });
  auto* rho = ode->add_subcommand("rho", "component size densities rho_k(t)");
  rule_opt(rho);
  rho->add_option("--tmax", o.tmax, "final time");
  rho->add_option("--kmax", o.kmax, "largest size");
  rho->add_option("--h", o.h, "ODE step");
  rho->add_option("--every", o.every, "row stride");
  out_opts(rho);
  rho->callback([&] { action = cmd_ode_rho; });
  auto* q = ode->add_subcommand("q", "(k,r)-piece densities on the critical window");
  rule_opt(q);
  q->add_option("--kmax", o.kmax, "largest k");
  q->add_option("--rmax", o.rmax, "largest r");
  q->add_option("--h", o.h, "ODE step");
  q->add_option("--sigma", o.sigma, "window half-width");
  q->add_option("--every", o.every, "row stride");
  out_opts(q);
  q->callback([&] { action = cmd_ode_q; });

  auto* bp = app.add_subcommand("bp", "branching process quantities");
  bp->require_subcommand(1);
  auto* surv = bp->add_subcommand("survival", "survival probability");
  auto* pmf = bp->add_subcommand("pmf", "total progeny point probabilities");
  auto* tail = bp->add_subcommand("tail", "exponential tail fit");
  auto* mom = bp->add_subcommand("moments", "susceptibility constants and moments");
  for (auto* c : {surv, pmf, tail, mom}) {
    rule_opt(c);
    time_opts(c);
    out_opts(c);
  }
  tail->add_flag("--curvature", o.curvature, "fit psi'' and theta at t_c");
  mom->add_option("--orders", o.orders, "moment orders")->delimiter(',');
  surv->callback([&] { action = cmd_bp_survival; });
  pmf->callback([&] { action = cmd_bp_pmf; });
  tail->callback([&] { action = cmd_bp_tail; });
  mom->callback([&] { action = cmd_bp_moments; });

  auto* exp = app.add_subcommand("exposure", "two-round exposure");
  exp->require_subcommand(1);
  auto* track = exp->add_subcommand("track", "parameter list at step t n");
  auto* sample = exp->add_subcommand("sample", "sample J(S) from a parameter list");
  auto* equiv = exp->add_subcommand("equiv", "chi-square comparison of G_i and J(S_i)");
  for (auto* c : {track, equiv}) {
    rule_opt(c);
    c->add_option("--n", o.n, "vertices");
    c->add_option("--seed", o.seed, "seed");
    c->add_option("--t0", o.t0, "first-round start time (default: window start)");
    c->add_option("--t", o.t, "time (default: t_c)");
    c->add_option("--h", o.h, "ODE step for t_c");
    out_opts(c);
  }
  equiv->add_option("--runs", o.runs, "paired runs");
  equiv->add_flag("--corrupt", o.corrupt, "double Q_{0,2} before sampling J");
  sample->add_option("--list", o.list, "parameter list JSON")->required();
  sample->add_option("--seed", o.seed, "seed");
  sample->add_flag("--poissonized", o.poissonized, "Poisson piece counts");
  out_opts(sample);
  track->callback([&] { action = cmd_exposure_track; });
  sample->callback([&] { action = cmd_exposure_sample; });
  equiv->callback([&] { action = cmd_exposure_equiv; });

  auto* verify = app.add_subcommand("verify", "run acceptance criteria");
  verify->add_option("suite", o.suite, "er-suite, theory, simulation, combinatorics, all, or a criterion number")
      ->required();
  out_opts(verify);
  verify->callback([&] { action = cmd_verify; });

  auto* report = app.add_subcommand("report", "run an experiment plan");
  report->add_option("--experiment", o.experiment, "experiment id")
      ->required()
      ->check(CLI::IsMember({"supercritical", "subcritical", "profile", "critical-tail", "susceptibility", "figure"}));
  rule_opt(report);
  report->add_option("--rules", o.rules, "rules for the figure")->delimiter(',');
  report->add_option("--n", o.n, "vertices");
  report->add_option("--eps", o.eps, "eps grid")->delimiter(',');
  report->add_option("--seed", o.seed, "first seed");
  report->add_option("--seeds", o.seeds, "seeds per cell");
  report->add_option("--orders", o.orders, "susceptibility orders")->delimiter(',');
  report->add_option("--tmax", o.tmax, "figure: final time");
  report->add_option("--dt", o.dt, "figure: time spacing");
  out_opts(report);
  report->callback([&] { action = cmd_report; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  try {
    return action(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::invalid_config:
      case ErrorKind::arity:
      case ErrorKind::theory_unsupported:
      case ErrorKind::parse:
      case ErrorKind::domain:
      case ErrorKind::window:
      case ErrorKind::mode:
        return kExitUsage;
      default:
        return kExitFail;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFail;
  }
}
