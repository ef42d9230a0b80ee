#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "bsrlab/error.hpp"
#include "bsrlab/ode_core.hpp"
#include "bsrlab/rng.hpp"

namespace bsrlab {

// Offspring law of the two-type branching process at time t, built from the
// rho_k(t0) profile and the (k,r)-piece densities q_{k,r}(t).
struct OffspringSpec {
  double t = 0.0;
  int cutoff = 0;
  int period = 1;
  double rho_omega_t0 = 0.0;
  double u = 0.0;

  std::vector<double> n_pmf;  // Pr(N = k), index k = 0..n_max
  double n_tail = 0.0;        // 1 - sum n_pmf

  int k_max = 0;              // piece dimensions
  int r_max = 0;
  std::vector<double> lambda;      // lambda_{k,r}, (k_max+1)*(r_max+1), includes (0,2)
  std::vector<double> init_large;  // rho_y(t0) for y > K, index y
  std::vector<double> init_small;  // z q_{z,r}(t), same layout as lambda
  double init_tail = 0.0;          // 1 - total initial mass

  int n_max() const { return static_cast<int>(n_pmf.size()) - 1; }
  std::size_t idx(int k, int r) const { return static_cast<std::size_t>(k * (r_max + 1) + r); }
  double lambda_at(int k, int r) const { return lambda[idx(k, r)]; }
  double init_piece(int z, int r) const { return init_small[idx(z, r)]; }
  double lambda_total() const {
    double s = 0.0;
    for (double x : lambda) s += x;
    return s;
  }
  double mean_N() const {
    double s = 0.0;
    for (int k = 1; k <= n_max(); ++k) s += k * n_pmf[k];
    return s;
  }
};

inline OffspringSpec build_offspring(const QSolution& q, double t) {
  const auto [lo, hi, w] = q.bracket(t);
  const int K = q.cutoff;
  OffspringSpec spec;
  spec.t = t;
  spec.cutoff = K;
  spec.period = q.period;
  spec.rho_omega_t0 = q.rho_omega_t0;
  spec.u = (1 - w) * q.u[lo] + w * q.u[hi];

  const int n_max = static_cast<int>(q.rho_t0.size()) - 1;
  spec.n_pmf.assign(static_cast<std::size_t>(n_max + 1), 0.0);
  spec.init_large.assign(static_cast<std::size_t>(n_max + 1), 0.0);
  double n_total = 0.0, init_total = 0.0;
  for (int k = K + 1; k <= n_max; ++k) {
    spec.init_large[k] = q.rho_t0[k];
    spec.n_pmf[k] = q.rho_t0[k] / q.rho_omega_t0;
    n_total += spec.n_pmf[k];
    init_total += q.rho_t0[k];
  }
  spec.n_tail = 1.0 - n_total;

  spec.k_max = q.k_max;
  spec.r_max = q.r_max;
  spec.lambda.assign(q.stride(), 0.0);
  spec.init_small.assign(q.stride(), 0.0);
  for (int k = 0; k <= q.k_max; ++k)
    for (int r = 0; r <= q.r_max; ++r) {
      const double v = (1 - w) * q.q(lo, k, r) + w * q.q(hi, k, r);
      spec.lambda[spec.idx(k, r)] = r * v / q.rho_omega_t0;
      if (k >= 1) {
        spec.init_small[spec.idx(k, r)] = k * v;
        init_total += k * v;
      }
    }
  spec.init_tail = 1.0 - init_total;
  return spec;
}

// ---------------------------------------------------------------------------
// Generating functions

inline double pgf_N(const OffspringSpec& s, double alpha) {
  double v = 0.0, a = 1.0;
  for (int k = 1; k <= s.n_max(); ++k) {
    a *= alpha;
    v += s.n_pmf[k] * a;
  }
  return v;
}

inline double pgf_N_derivative(const OffspringSpec& s, double alpha) {
  double v = 0.0, a = 1.0;
  for (int k = 1; k <= s.n_max(); ++k) {
    v += k * s.n_pmf[k] * a;
    a *= alpha;
  }
  return v;
}

// E alpha^Y beta^Z for the offspring of one L-particle.
inline double pgf_offspring(const OffspringSpec& s, double alpha, double beta) {
  const double phi = pgf_N(s, alpha);
  double log_v = 0.0;
  for (int k = 0; k <= s.k_max; ++k)
    for (int r = 1; r <= s.r_max; ++r) {
      const double l = s.lambda_at(k, r);
      if (l > 0) log_v += l * (std::pow(phi, r - 1) * std::pow(beta, k) - 1.0);
    }
  return std::exp(log_v);
}

// E alpha^{Y0} beta^{Z0} for the root generation.
inline double pgf_initial(const OffspringSpec& s, double alpha, double beta) {
  const double phi = pgf_N(s, alpha);
  double v = 0.0, a = 1.0;
  for (int y = 1; y < static_cast<int>(s.init_large.size()); ++y) {
    a *= alpha;
    v += s.init_large[y] * a;
  }
  for (int z = 1; z <= s.k_max; ++z)
    for (int r = 0; r <= s.r_max; ++r) {
      const double m = s.init_piece(z, r);
      if (m > 0) v += m * std::pow(beta, z) * std::pow(phi, r);
    }
  return v;
}

struct PgfValues {
  double Phi = 0.0;
  double phi = 0.0;
  double phi0 = 0.0;
};

inline PgfValues pgf_eval(const OffspringSpec& s, double alpha, double beta) {
  if (alpha < 0 || alpha > 1 || beta < 0 || beta > 1) throw Error(ErrorKind::domain, "pgf arguments must lie in [0,1]");
  return {pgf_N(s, alpha), pgf_offspring(s, alpha, beta), pgf_initial(s, alpha, beta)};
}

inline double mean_Y(const OffspringSpec& s) { return s.u * s.mean_N() / s.rho_omega_t0; }

// ---------------------------------------------------------------------------
// Survival

struct SurvivalResult {
  double t = 0.0;
  double rho1 = 0.0;
  double rho = 0.0;
  double mean_y = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

inline SurvivalResult survival_probability(const OffspringSpec& s, double tol = 1e-12, int max_iter = 100000) {
  SurvivalResult res;
  res.t = s.t;
  res.mean_y = mean_Y(s);
  if (res.mean_y <= 1.0) return res;

  double q = 0.0;
  for (;;) {
    const double next = pgf_offspring(s, q, 1.0);
    ++res.iterations;
    const double step = next - q;
    q = next;
    if (std::abs(step) < tol) break;
    if (res.iterations >= max_iter) throw Error(ErrorKind::numeric, "survival fixed point did not converge");
  }
  // Newton polish on f(q) = phi(q) - q.
  double slope = 0.0;
  const double phi_n = pgf_N(s, q), dphi_n = pgf_N_derivative(s, q);
  for (int k = 0; k <= s.k_max; ++k)
    for (int r = 2; r <= s.r_max; ++r) slope += s.lambda_at(k, r) * (r - 1) * std::pow(phi_n, r - 2) * dphi_n;
  const double f = pgf_offspring(s, q, 1.0);
  slope *= f;
  if (std::abs(slope - 1.0) > 1e-9) q -= (f - q) / (slope - 1.0);
  res.residual = std::abs(pgf_offspring(s, q, 1.0) - q);
  res.rho1 = 1.0 - q;
  res.rho = 1.0 - pgf_initial(s, q, 1.0);
  return res;
}

// ---------------------------------------------------------------------------
// Total progeny law

struct PointProbs {
  double t = 0.0;
  int period = 1;
  int cutoff = 0;
  std::vector<double> p;  // p[k] = Pr(|bp_t| = k), k = 0..k_max
  double rho = 0.0;
  double defect = 0.0;    // 1 - sum p_k - rho

  int k_max() const { return static_cast<int>(p.size()) - 1; }
};

// Power series of the total progeny. T(x) = x exp(Lambda(T(x), x)) is solved
// one coefficient at a time; all powers T^k and U^r (U = Phi(T)) are grown in
// step so coefficient j only reads coefficients < j + 1.
inline PointProbs total_progeny_pmf(const OffspringSpec& s, int k_max) {
  if (k_max < 1) throw Error(ErrorKind::invalid_config, "series order must be positive");
  if (k_max > s.n_max())
    throw Error(ErrorKind::truncation, "series order exceeds the offspring truncation; increase k_max");
  const int M = k_max;
  const std::size_t len = static_cast<std::size_t>(M + 1);
  const int R = s.r_max;

  std::vector<std::vector<double>> tp(len, std::vector<double>(len, 0.0));  // tp[k][j] = [x^j] T^k
  std::vector<std::vector<double>> up(static_cast<std::size_t>(R + 1), std::vector<double>(len, 0.0));
  tp[0][0] = 1.0;
  up[0][0] = 1.0;
  std::vector<double> T(len, 0.0), U(len, 0.0), L(len, 0.0), E(len, 0.0);

  struct Piece {
    int k, r;
    double l;
  };
  std::vector<Piece> pieces;
  double lambda_total = 0.0;
  for (int k = 0; k <= s.k_max; ++k)
    for (int r = 1; r <= R; ++r)
      if (s.lambda_at(k, r) > 0) {
        pieces.push_back({k, r, s.lambda_at(k, r)});
        lambda_total += s.lambda_at(k, r);
      }

  auto grow_powers = [&](int j) {
    for (int k = 1; k <= j; ++k) {
      double v = 0.0;
      for (int i = 1; i <= j - k + 1; ++i) v += T[i] * tp[k - 1][j - i];
      tp[k][j] = v;
    }
    double u = 0.0;
    for (int k = 1; k <= std::min(j, s.n_max()); ++k) u += s.n_pmf[k] * tp[k][j];
    U[j] = u;
    for (int r = 1; r <= R; ++r) {
      double v = 0.0;
      for (int i = 1; i <= j; ++i) v += U[i] * up[r - 1][j - i];
      up[r][j] = v;
    }
  };

  for (int j = 0; j < M; ++j) {
    grow_powers(j);
    double l = (j == 0) ? -lambda_total : 0.0;
    for (const auto& pc : pieces)
      if (pc.k <= j) l += pc.l * up[pc.r - 1][j - pc.k];
    L[j] = l;
    if (j == 0) {
      E[0] = std::exp(l);
    } else {
      double e = 0.0;
      for (int i = 1; i <= j; ++i) e += i * L[i] * E[j - i];
      E[j] = e / j;
    }
    T[j + 1] = E[j];
  }
  grow_powers(M);

  PointProbs out;
  out.t = s.t;
  out.period = s.period;
  out.cutoff = s.cutoff;
  out.p.assign(len, 0.0);
  for (int m = 1; m <= M; ++m) {
    double g = 0.0;
    for (int y = 1; y <= std::min(m, static_cast<int>(s.init_large.size()) - 1); ++y) g += s.init_large[y] * tp[y][m];
    for (int z = 1; z <= std::min(m, s.k_max); ++z)
      for (int r = 0; r <= R; ++r) {
        const double w = s.init_piece(z, r);
        if (w > 0) g += w * up[r][m - z];
      }
    out.p[m] = std::max(g, 0.0);
  }
  out.rho = survival_probability(s).rho;
  double total = out.rho;
  for (double x : out.p) total += x;
  out.defect = 1.0 - total;
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo sampler

class ProgenySampler {
 public:
  explicit ProgenySampler(const OffspringSpec& s) : spec_(s) {
    for (int k = 1; k <= s.n_max(); ++k) {
      if (s.n_pmf[k] <= 0) continue;
      n_values_.push_back(k);
      n_cum_.push_back((n_cum_.empty() ? 0.0 : n_cum_.back()) + s.n_pmf[k]);
    }
    for (int k = 0; k <= s.k_max; ++k)
      for (int r = 1; r <= s.r_max; ++r)
        if (s.lambda_at(k, r) > 0) {
          pieces_.push_back({k, r});
          piece_cum_.push_back((piece_cum_.empty() ? 0.0 : piece_cum_.back()) + s.lambda_at(k, r));
        }
    for (int y = 1; y < static_cast<int>(s.init_large.size()); ++y)
      if (s.init_large[y] > 0) {
        init_.push_back({y, -1});
        init_cum_.push_back((init_cum_.empty() ? 0.0 : init_cum_.back()) + s.init_large[y]);
      }
    for (int z = 1; z <= s.k_max; ++z)
      for (int r = 0; r <= s.r_max; ++r)
        if (s.init_piece(z, r) > 0) {
          init_.push_back({z, r});
          init_cum_.push_back((init_cum_.empty() ? 0.0 : init_cum_.back()) + s.init_piece(z, r));
        }
    if (n_cum_.empty() || init_cum_.empty()) throw Error(ErrorKind::invalid_config, "empty offspring law");
  }

  // Total progeny of one realization, or nullopt once it exceeds `cap`.
  // Truncated tails are dropped, so draws are conditioned on the kept support.
  std::optional<std::uint64_t> operator()(CounterRng& rng, std::uint64_t cap) const {
    const auto& root = init_[pick(init_cum_, rng)];
    std::uint64_t total = 0, pending = 0;
    if (root.second < 0) {
      pending = static_cast<std::uint64_t>(root.first);
    } else {
      total = static_cast<std::uint64_t>(root.first);
      for (int h = 0; h < root.second; ++h) pending += draw_N(rng);
    }
    const double rate = piece_cum_.empty() ? 0.0 : piece_cum_.back();
    while (pending > 0) {
      if (total + pending > cap) return std::nullopt;
      --pending;
      ++total;
      if (rate <= 0) continue;
      std::poisson_distribution<long> pois(rate);
      const long h = pois(rng);
      for (long i = 0; i < h; ++i) {
        const auto& pc = pieces_[pick(piece_cum_, rng)];
        total += static_cast<std::uint64_t>(pc.first);
        for (int j = 1; j < pc.second; ++j) pending += draw_N(rng);
      }
    }
    if (total > cap) return std::nullopt;
    return total;
  }

 private:
  static std::size_t pick(const std::vector<double>& cum, CounterRng& rng) {
    const double u = rng.uniform() * cum.back();
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
  }
  std::uint64_t draw_N(CounterRng& rng) const { return static_cast<std::uint64_t>(n_values_[pick(n_cum_, rng)]); }

  OffspringSpec spec_;
  std::vector<int> n_values_;
  std::vector<double> n_cum_;
  std::vector<std::pair<int, int>> pieces_;
  std::vector<double> piece_cum_;
  std::vector<std::pair<int, int>> init_;  // (y, -1) for V_L roots, (z, r) for pieces
  std::vector<double> init_cum_;
};

inline std::optional<std::uint64_t> sample_total_progeny(const OffspringSpec& s, CounterRng& rng, std::uint64_t cap) {
  if (cap < 1) throw Error(ErrorKind::invalid_config, "cap must be at least 1");
  return ProgenySampler(s)(rng, cap);
}

// ---------------------------------------------------------------------------
// Tail fit

struct TailFit {
  double t = 0.0;
  double psi = 0.0;
  double theta = 0.0;
  double residual = 0.0;  // max |log residual| over the window
  int k_lo = 0;
  int k_hi = 0;
  int points = 0;
};

// Least squares of log(p_k k^{3/2}) on (1, k) over k in [k_lo, k_hi] on the
// period lattice. theta is the per-lattice-point prefactor of p_k.
inline TailFit fit_tail(const PointProbs& pts, int k_lo = 32, int k_hi = 128,
                        const std::function<double(int)>& weight = {}) {
  if (k_hi < 4 * k_lo || k_lo < 1) throw Error(ErrorKind::window, "tail window needs k_hi >= 4 k_lo");
  if (k_hi > pts.k_max()) throw Error(ErrorKind::window, "tail window exceeds the computed point probabilities");
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::vector<std::pair<double, double>> data;
  for (int k = k_lo; k <= k_hi; ++k) {
    if (k <= pts.cutoff || k % pts.period != 0 || !(pts.p[k] > 0)) continue;
    const double x = k, y = std::log(pts.p[k] * std::pow(x, 1.5));
    const double w = weight ? weight(k) : 1.0;
    sw += w;
    sx += w * x;
    sy += w * y;
    sxx += w * x * x;
    sxy += w * x * y;
    data.push_back({x, y});
  }
  if (data.size() < 3) throw Error(ErrorKind::window, "insufficient support in the tail window");
  const double det = sw * sxx - sx * sx;
  const double slope = (sw * sxy - sx * sy) / det;
  const double icpt = (sy - slope * sx) / sw;
  TailFit fit;
  fit.t = pts.t;
  fit.psi = -slope;
  fit.theta = std::exp(icpt);
  fit.k_lo = k_lo;
  fit.k_hi = k_hi;
  fit.points = static_cast<int>(data.size());
  for (const auto& [x, y] : data) fit.residual = std::max(fit.residual, std::abs(y - icpt - slope * x));
  return fit;
}

struct CurvatureFit {
  double t_c = 0.0;
  double psi_tc = 0.0;
  double psi_slope = 0.0;
  double psi_pp = 0.0;  // psi''(t_c)
  double theta = 0.0;   // theta(t_c)
  double residual = 0.0;
  std::vector<double> t;
  std::vector<double> psi;
};

// Quadratic regression of psi on a symmetric grid t_c + spacing*(j - m/2).
inline CurvatureFit fit_curvature(const std::function<TailFit(double)>& tail_at, double t_c, double spacing = 0.005,
                                  int points = 9) {
  if (points < 3 || points % 2 == 0) throw Error(ErrorKind::invalid_config, "curvature fit needs an odd number of points");
  CurvatureFit out;
  out.t_c = t_c;
  const int half = points / 2;
  // Normal equations for psi = c0 + c1 x + c2 x^2.
  double m[3][4] = {};
  for (int j = -half; j <= half; ++j) {
    const double t = t_c + spacing * j;
    const auto fit = tail_at(t);
    if (j == 0) out.theta = fit.theta;
    const double x = t - t_c;
    const double basis[3] = {1.0, x, x * x};
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) m[a][b] += basis[a] * basis[b];
      m[a][3] += basis[a] * fit.psi;
    }
    out.t.push_back(t);
    out.psi.push_back(fit.psi);
  }
  for (int c = 0; c < 3; ++c) {
    for (int r = c + 1; r < 3; ++r) {
      const double f = m[r][c] / m[c][c];
      for (int k = c; k < 4; ++k) m[r][k] -= f * m[c][k];
    }
  }
  double coef[3];
  for (int r = 2; r >= 0; --r) {
    double v = m[r][3];
    for (int k = r + 1; k < 3; ++k) v -= m[r][k] * coef[k];
    coef[r] = v / m[r][r];
  }
  out.psi_tc = coef[0];
  out.psi_slope = coef[1];
  out.psi_pp = 2 * coef[2];
  for (std::size_t i = 0; i < out.t.size(); ++i) {
    const double x = out.t[i] - t_c;
    out.residual = std::max(out.residual, std::abs(out.psi[i] - coef[0] - coef[1] * x - coef[2] * x * x));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Moments and susceptibility constants

inline double double_factorial(int x) {
  double v = 1.0;
  for (int k = x; k > 1; k -= 2) v *= k;
  return v;
}

struct MomentTable {
  std::vector<int> orders;
  std::vector<double> B;  // B_r for each order
  double theta = 0.0;
  double psi_pp = 0.0;
  int period = 1;

  double at(int r) const {
    for (std::size_t i = 0; i < orders.size(); ++i)
      if (orders[i] == r) return B[i];
    throw Error(ErrorKind::invalid_config, "order not in table");
  }
};

inline MomentTable susceptibility_constants(double theta, double psi_pp, int period, const std::vector<int>& orders) {
  if (!(psi_pp > 0) || !(theta > 0)) throw Error(ErrorKind::numeric, "susceptibility constants need theta, psi'' > 0");
  MomentTable tab;
  tab.theta = theta;
  tab.psi_pp = psi_pp;
  tab.period = period;
  for (int r : orders) {
    if (r < 2) throw Error(ErrorKind::invalid_config, "susceptibility order must be at least 2");
    tab.orders.push_back(r);
    tab.B.push_back(double_factorial(2 * r - 5) * std::sqrt(2 * M_PI) * theta / period * std::pow(psi_pp, -r + 1.5));
  }
  return tab;
}

inline MomentTable susceptibility_constants(const CurvatureFit& c, int period, const std::vector<int>& orders) {
  return susceptibility_constants(c.theta, c.psi_pp, period, orders);
}

struct MomentEstimate {
  int r = 0;
  double value = 0.0;
  double sum = 0.0;   // sum_{k <= k_max} k^{r-1} p_k
  double tail = 0.0;  // fitted tail beyond k_max
};

// E|bp_t|^{r-1}; the part beyond the series order is taken from the fitted
// k^{-3/2} theta e^{-psi k} profile on the period lattice.
inline MomentEstimate moments(const PointProbs& pts, int r, const TailFit& fit) {
  if (pts.rho > 0 || !(fit.psi > 0)) throw Error(ErrorKind::divergent_moment, "moments diverge for t >= t_c");
  if (r < 2) throw Error(ErrorKind::invalid_config, "moment order must be at least 2");
  MomentEstimate m;
  m.r = r;
  for (int k = 1; k <= pts.k_max(); ++k) m.sum += std::pow(static_cast<double>(k), r - 1) * pts.p[k];
  const double a = r - 1.5;
  const double x0 = fit.psi * (pts.k_max() + 0.5 * pts.period);
  m.tail = fit.theta / pts.period * std::pow(fit.psi, -a) * boost::math::tgamma(a, x0);
  m.value = m.sum + m.tail;
  return m;
}

}  // namespace bsrlab
