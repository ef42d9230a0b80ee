#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <tuple>
#include <vector>

#include "bsrlab/error.hpp"
#include "bsrlab/process_sim.hpp"
#include "bsrlab/rule_engine.hpp"

namespace bsrlab {

// Class indices: 0..K-1 stand for sizes 1..K, K stands for omega.
inline int size_class(std::int64_t size, int cutoff) {
  return size <= cutoff ? static_cast<int>(size) - 1 : cutoff;
}

class PairWeightMatrix {
 public:
  PairWeightMatrix() = default;
  explicit PairWeightMatrix(int classes) : classes_(classes), w_(static_cast<std::size_t>(classes * classes), 0.0) {}

  int classes() const { return classes_; }
  double operator()(int s1, int s2) const { return w_[static_cast<std::size_t>(s1 * classes_ + s2)]; }
  double& at(int s1, int s2) { return w_[static_cast<std::size_t>(s1 * classes_ + s2)]; }
  void clear() { std::fill(w_.begin(), w_.end(), 0.0); }

 private:
  int classes_ = 0;
  std::vector<double> w_;
};

// The rule table flattened for repeated evaluation of
// W(s1,s2) = sum over profiles picking classes (s1,s2) of the product of the
// masses of the remaining coordinates.
class PairWeightKernel {
 public:
  explicit PairWeightKernel(const RuleSpec& rule) : cutoff_(rule.cutoff()), others_count_(rule.arity() - 2) {
    rule.require_bounded();
    std::array<int, kMaxArity> cls{};
    for (std::size_t idx = 0; idx < rule.profile_count(); ++idx) {
      rule.decode_profile(idx, cls.data());
      const RulePick p = rule.pick_at(idx);
      slots_.push_back(cls[p.first] * (cutoff_ + 1) + cls[p.second]);
      for (int j = 0; j < rule.arity(); ++j)
        if (j != p.first && j != p.second) others_.push_back(cls[j]);
    }
  }

  int cutoff() const { return cutoff_; }
  int classes() const { return cutoff_ + 1; }

  void compute(const double* mass, PairWeightMatrix& out) const {
    if (out.classes() != classes()) out = PairWeightMatrix(classes());
    out.clear();
    const int nc = classes();
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      double prod = 1.0;
      const int* o = others_.data() + i * static_cast<std::size_t>(others_count_);
      for (int j = 0; j < others_count_; ++j) prod *= mass[o[j]];
      out.at(slots_[i] / nc, slots_[i] % nc) += prod;
    }
  }

 private:
  int cutoff_;
  int others_count_;
  std::vector<int> slots_;
  std::vector<int> others_;
};

inline PairWeightMatrix pair_weights(const RuleSpec& rule, const std::vector<double>& class_mass) {
  rule.require_bounded();
  if (static_cast<int>(class_mass.size()) != rule.class_count())
    throw Error(ErrorKind::invalid_config, "pair_weights needs one mass per class");
  for (double m : class_mass)
    if (m < 0) throw Error(ErrorKind::domain, "class masses must be non-negative");
  PairWeightMatrix w(rule.class_count());
  PairWeightKernel(rule).compute(class_mass.data(), w);
  return w;
}

// D(c) = sum_s (W(c,s) + W(s,c)) m(s): rate at which a class-c vertex is joined.
inline void join_rates(const PairWeightMatrix& w, const double* mass, double* out) {
  const int nc = w.classes();
  for (int c = 0; c < nc; ++c) {
    double d = 0.0;
    for (int s = 0; s < nc; ++s) d += (w(c, s) + w(s, c)) * mass[s];
    out[c] = d;
  }
}

// Finite class system by merge case analysis: picking classes (c1,c2) with
// probability W m1 m2 moves a vertices out of class a, b out of class b and
// a+b into the class of a+b; omega absorbs anything it touches.
inline void finite_class_derivative(const PairWeightMatrix& w, const double* mass, double* out) {
  const int nc = w.classes();
  const int K = nc - 1;
  std::fill(out, out + nc, 0.0);
  for (int c1 = 0; c1 < nc; ++c1) {
    for (int c2 = 0; c2 < nc; ++c2) {
      const double rate = w(c1, c2) * mass[c1] * mass[c2];
      if (rate == 0.0) continue;
      if (c1 == K && c2 == K) continue;
      const int a = c1 + 1, b = c2 + 1;
      if (c1 < K) {
        out[c1] -= a * rate;
        out[c2 < K ? size_class(a + b, K) : K] += a * rate;
      }
      if (c2 < K) {
        out[c2] -= b * rate;
        out[c1 < K ? size_class(a + b, K) : K] += b * rate;
      }
    }
  }
}

template <class F>
void rk4_step(F&& f, double t, std::vector<double>& y, double h, std::array<std::vector<double>, 5>& work) {
  const std::size_t n = y.size();
  for (auto& v : work) v.resize(n);
  auto& [k1, k2, k3, k4, tmp] = work;
  f(t, y, k1);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
  f(t + 0.5 * h, tmp, k2);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
  f(t + 0.5 * h, tmp, k3);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * k3[i];
  f(t + h, tmp, k4);
  for (std::size_t i = 0; i < n; ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

// Piecewise-uniform grid on [t_start, t_end] that hits every anchor exactly.
inline std::vector<double> anchored_grid(double t_start, double t_end, double h, std::vector<double> anchors) {
  if (!(h > 0)) throw Error(ErrorKind::invalid_config, "step size must be positive");
  anchors.push_back(t_start);
  anchors.push_back(t_end);
  std::sort(anchors.begin(), anchors.end());
  std::vector<double> nodes;
  for (double a : anchors)
    if (a >= t_start && a <= t_end && (nodes.empty() || a - nodes.back() > 1e-12)) nodes.push_back(a);
  std::vector<double> grid{nodes.front()};
  for (std::size_t s = 0; s + 1 < nodes.size(); ++s) {
    const double len = nodes[s + 1] - nodes[s];
    const auto m = static_cast<std::size_t>(std::max(1.0, std::ceil(len / h - 1e-9)));
    for (std::size_t j = 1; j < m; ++j) grid.push_back(nodes[s] + len * static_cast<double>(j) / static_cast<double>(m));
    grid.push_back(nodes[s + 1]);
  }
  return grid;
}

// ---------------------------------------------------------------------------
// rho_k system

struct RhoSolution {
  int cutoff = 0;
  int k_max = 0;
  int period = 1;
  std::vector<double> t;
  std::vector<double> values;   // per time: k_max+1 entries, index k
  std::vector<double> classes;  // per time: finite class system, K+1 entries

  std::size_t size() const { return t.size(); }
  double rho(std::size_t i, int k) const { return values[i * static_cast<std::size_t>(k_max + 1) + k]; }
  const double* row(std::size_t i) const { return values.data() + i * static_cast<std::size_t>(k_max + 1); }
  double finite_class(std::size_t i, int c) const { return classes[i * static_cast<std::size_t>(cutoff + 1) + c]; }

  // rho_omega = rho_{>= K+1} from the extended system.
  double omega(std::size_t i) const { return at_least(i, cutoff + 1); }
  double at_least(std::size_t i, int k) const {
    double s = 1.0;
    for (int j = 1; j < k && j <= k_max; ++j) s -= rho(i, j);
    return s;
  }
  double tail(std::size_t i) const { return at_least(i, k_max + 1); }

  std::size_t index_of(double time) const {
    auto it = std::lower_bound(t.begin(), t.end(), time - 1e-12);
    if (it == t.end() || std::abs(*it - time) > 1e-12)
      throw Error(ErrorKind::domain, "time is not a grid point of the rho solution");
    return static_cast<std::size_t>(it - t.begin());
  }

  // Linear interpolation of the full row at time `time`.
  std::vector<double> row_at(double time) const {
    if (time < t.front() - 1e-12 || time > t.back() + 1e-12)
      throw Error(ErrorKind::domain, "time outside the rho solution grid");
    auto it = std::lower_bound(t.begin(), t.end(), time);
    std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - t.begin()), t.size() - 1);
    if (std::abs(t[hi] - time) <= 1e-12 || hi == 0) return {row(hi), row(hi) + k_max + 1};
    const std::size_t lo = hi - 1;
    const double w = (time - t[lo]) / (t[hi] - t[lo]);
    std::vector<double> out(static_cast<std::size_t>(k_max + 1));
    for (int k = 0; k <= k_max; ++k) out[k] = (1 - w) * rho(lo, k) + w * rho(hi, k);
    return out;
  }
};

// Extended right-hand side for rho_1..rho_kmax. Every k uses the same
// factorized form: creation by convolution, loss at the class join rate.
class RhoSystem {
 public:
  RhoSystem(const RuleSpec& rule, int k_max) : kernel_(rule), K_(rule.cutoff()), k_max_(k_max) {
    if (k_max < K_ + 1) throw Error(ErrorKind::invalid_config, "k_max must be at least K+1");
    mass_.resize(K_ + 1);
    rate_.resize(K_ + 1);
  }

  // State layout: rho_0 (unused) .. rho_kmax, then the K+1 finite classes.
  std::size_t state_size() const { return static_cast<std::size_t>(k_max_ + 1 + K_ + 1); }

  void operator()(double, const std::vector<double>& y, std::vector<double>& dy) {
    double small = 0.0;
    for (int c = 0; c < K_; ++c) {
      mass_[c] = y[c + 1];
      small += y[c + 1];
    }
    mass_[K_] = 1.0 - small;
    kernel_.compute(mass_.data(), w_);
    join_rates(w_, mass_.data(), rate_.data());

    dy[0] = 0.0;
    for (int k = 1; k <= k_max_; ++k) {
      double conv = 0.0;
      for (int a = 1; 2 * a < k; ++a) {
        const int ca = size_class(a, K_), cb = size_class(k - a, K_);
        conv += y[a] * y[k - a] * (w_(ca, cb) + w_(cb, ca));
      }
      if (k % 2 == 0) {
        const int c = size_class(k / 2, K_);
        conv += y[k / 2] * y[k / 2] * w_(c, c);
      }
      dy[k] = k * (conv - y[k] * rate_[size_class(k, K_)]);
    }

    const double* fin = y.data() + k_max_ + 1;
    kernel_.compute(fin, w_finite_);
    finite_class_derivative(w_finite_, fin, dy.data() + k_max_ + 1);
  }

 private:
  PairWeightKernel kernel_;
  int K_;
  int k_max_;
  std::vector<double> mass_, rate_;
  PairWeightMatrix w_, w_finite_;
};

struct OdeOptions {
  double h = 1e-4;
  int k_max = 256;
  int q_k_max = 96;
  int q_r_max = 24;
  double s_max = 1e8;
  double tol = 1e-6;
};

inline RhoSolution integrate_rho(const RuleSpec& rule, int k_max, double t_end, double h,
                                 const std::vector<double>& anchors = {}, double tol = 1e-6) {
  rule.require_bounded();
  if (t_end < 0) throw Error(ErrorKind::invalid_config, "t_end must be non-negative");
  RhoSystem system(rule, k_max);
  const int K = rule.cutoff();

  RhoSolution sol;
  sol.cutoff = K;
  sol.k_max = k_max;
  sol.period = detect_period(rule, std::max(256, 8 * (K + 1))).period;
  sol.t = anchored_grid(0.0, t_end, h, anchors);

  std::vector<double> y(system.state_size(), 0.0);
  y[1] = 1.0;
  y[static_cast<std::size_t>(k_max + 1) + size_class(1, K)] += 1.0;

  sol.values.reserve(sol.t.size() * static_cast<std::size_t>(k_max + 1));
  sol.classes.reserve(sol.t.size() * static_cast<std::size_t>(K + 1));
  auto store = [&] {
    sol.values.insert(sol.values.end(), y.begin(), y.begin() + k_max + 1);
    sol.classes.insert(sol.classes.end(), y.begin() + k_max + 1, y.end());
  };
  store();
  std::array<std::vector<double>, 5> work;
  for (std::size_t i = 1; i < sol.t.size(); ++i) {
    rk4_step(system, sol.t[i - 1], y, sol.t[i] - sol.t[i - 1], work);
    double total = 0.0;
    for (int k = 1; k <= k_max; ++k) {
      if (!(y[k] >= -tol)) throw Error(ErrorKind::refine_step, "rho_k became negative; refine the step size");
      total += y[k];
    }
    if (!(total <= 1.0 + tol)) throw Error(ErrorKind::refine_step, "rho mass exceeds 1; refine the step size");
    store();
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Critical time via the susceptibility closure

struct SusceptibilityCurve {
  std::vector<double> t;
  std::vector<double> s2;
  double t_c = 0.0;
  double err = 0.0;
  double s_max = 0.0;
  double h = 0.0;
};

// Integrates the finite classes together with v = 1/s_2, where
// s_2' = 2 sum W(s1,s2) x(s1) x(s2), x(k) = k rho_k for k <= K and
// x(omega) = s_2 - sum_{k<=K} k rho_k. v is smooth through the blowup.
inline SusceptibilityCurve estimate_tc(const RuleSpec& rule, double s_max = 1e8, double h = 1e-4) {
  rule.require_bounded();
  if (!(s_max > 10)) throw Error(ErrorKind::invalid_config, "S_max must exceed 10");
  const PairWeightKernel kernel(rule);
  const int K = rule.cutoff();
  const int nc = K + 1;
  PairWeightMatrix w;
  std::vector<double> yv(static_cast<std::size_t>(nc));

  auto rhs = [&](double, const std::vector<double>& y, std::vector<double>& dy) {
    kernel.compute(y.data(), w);
    finite_class_derivative(w, y.data(), dy.data());
    const double v = y[nc];
    double c = 0.0;
    for (int k = 0; k < K; ++k) {
      yv[k] = (k + 1) * y[k] * v;
      c += (k + 1) * y[k];
    }
    yv[K] = 1.0 - v * c;
    double acc = 0.0;
    for (int a = 0; a < nc; ++a)
      for (int b = 0; b < nc; ++b) acc += w(a, b) * yv[a] * yv[b];
    dy[nc] = -2.0 * acc;
  };

  std::vector<double> y(static_cast<std::size_t>(nc + 1), 0.0);
  y[size_class(1, K)] = 1.0;
  y[nc] = 1.0;
  SusceptibilityCurve curve;
  curve.s_max = s_max;
  curve.h = h;
  curve.t.push_back(0.0);
  curve.s2.push_back(1.0);
  std::array<std::vector<double>, 5> work;
  std::vector<double> dy(y.size());
  double t = 0.0;
  const double v_stop = 1.0 / s_max;
  while (y[nc] > v_stop) {
    if (t > 2.0) throw Error(ErrorKind::no_blowup, "s_2 stays below S_max up to t=2; rule likely misconfigured");
    rhs(t, y, dy);
    double step = h;
    if (dy[nc] < 0) step = std::min(h, 0.05 * y[nc] / -dy[nc]);
    rk4_step(rhs, t, y, step, work);
    t += step;
    if (!(y[nc] > 0)) break;
    curve.t.push_back(t);
    curve.s2.push_back(1.0 / y[nc]);
  }

  // Linear fit of 1/s_2 over the last decade of growth.
  std::vector<double> ft, fv;
  for (std::size_t i = 0; i < curve.t.size(); ++i)
    if (curve.s2[i] >= s_max / 10.0) {
      ft.push_back(curve.t[i]);
      fv.push_back(1.0 / curve.s2[i]);
    }
  if (ft.size() < 3) throw Error(ErrorKind::numeric, "too few points in the final decade for the blowup fit");
  const double n = static_cast<double>(ft.size());
  double mt = 0, mv = 0;
  for (std::size_t i = 0; i < ft.size(); ++i) {
    mt += ft[i] / n;
    mv += fv[i] / n;
  }
  double stt = 0, stv = 0;
  for (std::size_t i = 0; i < ft.size(); ++i) {
    stt += (ft[i] - mt) * (ft[i] - mt);
    stv += (ft[i] - mt) * (fv[i] - mv);
  }
  const double slope = stv / stt;
  const double icpt = mv - slope * mt;
  curve.t_c = -icpt / slope;
  double worst = 0.0;
  for (std::size_t i = 0; i < ft.size(); ++i) worst = std::max(worst, std::abs(fv[i] - (icpt + slope * ft[i])));
  curve.err = worst / std::abs(slope);
  return curve;
}

// ---------------------------------------------------------------------------
// Critical window

struct CriticalWindow {
  double t_c = 0.0;
  double sigma = 0.0;
  double t0 = 0.0;
  double t1 = 0.0;

  static double default_sigma(const RuleSpec& rule, double t_c) {
    const double l = rule.arity();
    return std::min(1.0 / (2.0 * l * l * (rule.cutoff() + 1)), t_c / 3.0);
  }

  static CriticalWindow make(double t_c, double sigma) {
    if (!(sigma > 0) || !(sigma < t_c)) throw Error(ErrorKind::domain, "window half-width must lie in (0, t_c)");
    return {t_c, sigma, t_c - sigma, t_c + sigma};
  }

  static CriticalWindow for_rule(const RuleSpec& rule, double t_c) { return make(t_c, default_sigma(rule, t_c)); }

  bool contains(double t) const { return t >= t0 - 1e-12 && t <= t1 + 1e-12; }
};

// ---------------------------------------------------------------------------
// q_{k,r} system

struct QSolution {
  CriticalWindow window;
  int cutoff = 0;
  int k_max = 0;
  int r_max = 0;
  int period = 1;
  std::vector<double> t;
  std::vector<double> values;   // per time: (k_max+1)*(r_max+1); q_{0,2} sits at (0,2)
  std::vector<double> classes;  // per time: rho classes at t
  std::vector<double> u;
  std::vector<double> rho_t0;  // rho_k(t0), k = 0..rho k_max
  double rho_omega_t0 = 0.0;
  double vs_mass = 0.0;  // sum_{k<=K} rho_k(t0)
  double max_mass_residual = 0.0;
  double max_omega_residual = 0.0;

  std::size_t stride() const { return static_cast<std::size_t>((k_max + 1) * (r_max + 1)); }
  double q(std::size_t i, int k, int r) const {
    return values[i * stride() + static_cast<std::size_t>(k * (r_max + 1) + r)];
  }
  double q02(std::size_t i) const { return q(i, 0, 2); }
  double rho_class(std::size_t i, int c) const { return classes[i * static_cast<std::size_t>(cutoff + 1) + c]; }

  int s_class(int k, int r) const { return (k > cutoff || r >= 1) ? cutoff : k - 1; }

  // Interpolation bracket for time `time`: (lo, hi, weight of hi).
  std::tuple<std::size_t, std::size_t, double> bracket(double time) const {
    if (!window.contains(time) || time < t.front() - 1e-12 || time > t.back() + 1e-12)
      throw Error(ErrorKind::domain, "time outside the critical window");
    auto it = std::lower_bound(t.begin(), t.end(), time - 1e-12);
    std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - t.begin()), t.size() - 1);
    if (std::abs(t[hi] - time) <= 1e-12 || hi == 0) return {hi, hi, 0.0};
    return {hi - 1, hi, (time - t[hi - 1]) / (t[hi] - t[hi - 1])};
  }
};

class QSystem {
 public:
  QSystem(const RuleSpec& rule, int k_max, int r_max, double rho_omega_t0)
      : kernel_(rule), K_(rule.cutoff()), k_max_(k_max), r_max_(r_max), theta_L_(rho_omega_t0) {}

  std::size_t q_size() const { return static_cast<std::size_t>((k_max_ + 1) * (r_max_ + 1)); }
  std::size_t state_size() const { return q_size() + static_cast<std::size_t>(K_ + 1); }
  int s_class(int k, int r) const { return (k > K_ || r >= 1) ? K_ : k - 1; }
  std::size_t idx(int k, int r) const { return static_cast<std::size_t>(k * (r_max_ + 1) + r); }

  void operator()(double, const std::vector<double>& y, std::vector<double>& dy) {
    const double* mass = y.data() + q_size();
    kernel_.compute(mass, w_);
    rate_.resize(K_ + 1);
    join_rates(w_, mass, rate_.data());
    std::fill(dy.begin(), dy.end(), 0.0);

    // Non-zero (k,r) pieces, k >= 1, weighted by k.
    entries_.clear();
    for (int k = 1; k <= k_max_; ++k)
      for (int r = 0; r <= r_max_; ++r) {
        const double a = k * y[idx(k, r)];
        if (a > 0) entries_.push_back({k, r, s_class(k, r), a});
      }

    // F1: two V_S pieces joined.
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e1 = entries_[i];
      for (std::size_t j = i; j < entries_.size(); ++j) {
        const auto& e2 = entries_[j];
        if (e1.k + e2.k > k_max_) break;
        if (e1.r + e2.r > r_max_) continue;
        const double w = (i == j) ? w_(e1.c, e1.c) : w_(e1.c, e2.c) + w_(e2.c, e1.c);
        dy[idx(e1.k + e2.k, e1.r + e2.r)] += e1.a * e2.a * w;
      }
    }
    for (const auto& e : entries_) {
      // F2: a V_S piece gains a stub to V_L.
      if (e.r < r_max_) dy[idx(e.k, e.r + 1)] += e.a * theta_L_ * (w_(e.c, K_) + w_(K_, e.c));
      // F3: the piece is absorbed into something else.
      dy[idx(e.k, e.r)] -= e.a * rate_[e.c];
    }
    // V_L-V_L edges.
    dy[idx(0, 2)] = w_(K_, K_) * theta_L_ * theta_L_;

    finite_class_derivative(w_, mass, dy.data() + q_size());
  }

 private:
  struct Entry {
    int k, r, c;
    double a;
  };
  PairWeightKernel kernel_;
  int K_, k_max_, r_max_;
  double theta_L_;
  PairWeightMatrix w_;
  std::vector<double> rate_;
  std::vector<Entry> entries_;
};

inline QSolution integrate_q(const RuleSpec& rule, const CriticalWindow& window, const RhoSolution& rho, int k_max,
                             int r_max, double h, const std::vector<double>& anchors = {}, double tol = 1e-6) {
  rule.require_bounded();
  if (k_max < 1 || r_max < 2) throw Error(ErrorKind::invalid_config, "q system needs k_max >= 1 and r_max >= 2");
  const int K = rule.cutoff();
  if (rho.cutoff != K) throw Error(ErrorKind::invalid_config, "rho solution belongs to another rule");
  if (rho.t.back() < window.t0 - 1e-12) throw Error(ErrorKind::domain, "rho solution does not reach t0");

  QSolution sol;
  sol.window = window;
  sol.cutoff = K;
  sol.k_max = k_max;
  sol.r_max = r_max;
  sol.period = rho.period;
  sol.rho_t0 = rho.row_at(window.t0);
  sol.vs_mass = 0.0;
  for (int k = 1; k <= K; ++k) sol.vs_mass += sol.rho_t0[k];
  sol.rho_omega_t0 = 1.0 - sol.vs_mass;

  QSystem system(rule, k_max, r_max, sol.rho_omega_t0);
  std::vector<double> y(system.state_size(), 0.0);
  for (int k = 1; k <= K && k <= k_max; ++k) y[system.idx(k, 0)] = sol.rho_t0[k] / k;
  for (int c = 0; c < K; ++c) y[system.q_size() + c] = sol.rho_t0[c + 1];
  y[system.q_size() + K] = sol.rho_omega_t0;

  sol.t = anchored_grid(window.t0, window.t1, h, anchors);
  std::array<std::vector<double>, 5> work;
  auto store = [&] {
    sol.values.insert(sol.values.end(), y.begin(), y.begin() + static_cast<std::ptrdiff_t>(system.q_size()));
    sol.classes.insert(sol.classes.end(), y.begin() + static_cast<std::ptrdiff_t>(system.q_size()), y.end());
    double u = 0.0, mass = 0.0, omega_vs = 0.0;
    for (int k = 0; k <= k_max; ++k)
      for (int r = 0; r <= r_max; ++r) {
        const double q = y[system.idx(k, r)];
        u += r * (r - 1) * q;
        if (k == 0) continue;
        mass += k * q;
        if (system.s_class(k, r) == K) omega_vs += k * q;
      }
    sol.u.push_back(u);
    sol.max_mass_residual = std::max(sol.max_mass_residual, std::abs(mass - sol.vs_mass));
    const double omega_now = y[system.q_size() + K];
    sol.max_omega_residual =
        std::max(sol.max_omega_residual, std::abs(omega_now - sol.rho_omega_t0 - omega_vs));
  };
  store();
  for (std::size_t i = 1; i < sol.t.size(); ++i) {
    rk4_step(system, sol.t[i - 1], y, sol.t[i] - sol.t[i - 1], work);
    store();
  }
  if (sol.max_mass_residual > tol || sol.max_omega_residual > tol)
    throw Error(ErrorKind::truncation, "q system lost mass (residual " + format_double(sol.max_mass_residual) +
                                           "); increase k_max/r_max");
  return sol;
}

struct ConservationReport {
  double q_mass = 0.0;    // max |sum k q_{k,r} - sum_{k<=K} rho_k(t0)|
  double rho_total = 0.0;  // max |sum rho_k + rho_tail - 1|
  double omega = 0.0;      // max |rho_omega(t) - rho_omega(t0) - V_S omega mass|
  double class_agreement = 0.0;  // finite vs extended system, k <= K
};

inline ConservationReport conservation_report(const RhoSolution& rho, const QSolution& q) {
  ConservationReport rep;
  rep.q_mass = q.max_mass_residual;
  rep.omega = q.max_omega_residual;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    double s = rho.tail(i);
    for (int k = 1; k <= rho.k_max; ++k) s += rho.rho(i, k);
    rep.rho_total = std::max(rep.rho_total, std::abs(s - 1.0));
    for (int c = 0; c < rho.cutoff; ++c)
      rep.class_agreement = std::max(rep.class_agreement, std::abs(rho.finite_class(i, c) - rho.rho(i, c + 1)));
    rep.class_agreement = std::max(rep.class_agreement, std::abs(rho.finite_class(i, rho.cutoff) - rho.omega(i)));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Dumps

inline void write_rho_csv(std::ostream& os, const RhoSolution& sol, std::size_t every = 1) {
  os << "t";
  for (int k = 1; k <= sol.k_max; ++k) os << ",rho_" << k;
  os << ",rho_tail\n";
  for (std::size_t i = 0; i < sol.size(); i += std::max<std::size_t>(every, 1)) {
    os << format_double(sol.t[i]);
    for (int k = 1; k <= sol.k_max; ++k) os << ',' << format_double(sol.rho(i, k));
    os << ',' << format_double(sol.tail(i)) << '\n';
  }
}

inline void write_q_csv(std::ostream& os, const QSolution& sol, std::size_t every = 1) {
  os << "t,k,r,value\n";
  for (std::size_t i = 0; i < sol.t.size(); i += std::max<std::size_t>(every, 1))
    for (int k = 0; k <= sol.k_max; ++k)
      for (int r = 0; r <= sol.r_max; ++r) {
        const double v = sol.q(i, k, r);
        if (v > 0) os << format_double(sol.t[i]) << ',' << k << ',' << r << ',' << format_double(v) << '\n';
      }
}

}  // namespace bsrlab
