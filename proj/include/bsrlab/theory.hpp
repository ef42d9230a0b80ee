#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "bsrlab/branching_core.hpp"
#include "bsrlab/ode_core.hpp"

namespace bsrlab {

struct TheoryOptions {
  double h = 1e-4;
  double s_max = 1e8;
  int rho_k_max = 256;
  int q_k_max = 64;
  int q_r_max = 16;
  int series_order = 256;
  double tol = 1e-6;
  double sigma = 0.0;  // 0 selects min(1/(2 l^2 (K+1)), t_c/3)
  int tail_k_lo = 32;
  int tail_k_hi = 128;
  double curvature_spacing = 0.005;
  int curvature_points = 9;
  std::vector<double> anchors;         // times placed exactly on the ODE grid
  std::vector<double> anchor_offsets;  // same, as offsets from t_c
};

// ODE solutions for one rule on one window, with the branching-process
// quantities derived from them on demand.
class TheoryEngine {
 public:
  TheoryEngine(RuleSpec rule, TheoryOptions opt = {}) : rule_(std::move(rule)), opt_(std::move(opt)) {
    rule_.require_bounded();
    curve_ = estimate_tc(rule_, opt_.s_max, opt_.h);
    const double sigma = opt_.sigma > 0 ? opt_.sigma : CriticalWindow::default_sigma(rule_, curve_.t_c);
    if (sigma >= curve_.t_c) throw Error(ErrorKind::invalid_config, "window start must be positive");
    window_ = CriticalWindow::make(curve_.t_c, sigma);
    std::vector<double> anchors = opt_.anchors;
    anchors.push_back(window_.t0);
    anchors.push_back(window_.t_c);
    for (double d : opt_.anchor_offsets)
      if (window_.contains(window_.t_c + d)) anchors.push_back(window_.t_c + d);
    const int half = opt_.curvature_points / 2;
    for (int j = -half; j <= half; ++j) anchors.push_back(window_.t_c + opt_.curvature_spacing * j);
    rho_ = integrate_rho(rule_, opt_.rho_k_max, window_.t1, opt_.h, anchors, opt_.tol);
    q_ = integrate_q(rule_, window_, rho_, opt_.q_k_max, opt_.q_r_max, opt_.h, anchors, opt_.tol);
  }

  const RuleSpec& rule() const { return rule_; }
  const TheoryOptions& options() const { return opt_; }
  const SusceptibilityCurve& curve() const { return curve_; }
  double t_c() const { return curve_.t_c; }
  const CriticalWindow& window() const { return window_; }
  const RhoSolution& rho() const { return rho_; }
  const QSolution& q() const { return q_; }
  int period() const { return rho_.period; }

  OffspringSpec offspring(double t) const { return build_offspring(q_, t); }
  double mean_y(double t) const { return mean_Y(offspring(t)); }
  SurvivalResult survival(double t) const { return survival_probability(offspring(t)); }
  PointProbs points(double t, int order = 0) const {
    return total_progeny_pmf(offspring(t), order > 0 ? order : opt_.series_order);
  }
  TailFit tail(double t) const { return fit_tail(points(t), opt_.tail_k_lo, opt_.tail_k_hi); }

  const CurvatureFit& curvature() const {
    std::call_once(curvature_once_, [this] {
      curvature_ = fit_curvature([this](double t) { return tail(t); }, window_.t_c, opt_.curvature_spacing,
                                 opt_.curvature_points);
    });
    return curvature_;
  }
  MomentTable constants(const std::vector<int>& orders) const {
    return susceptibility_constants(curvature(), period(), orders);
  }
  // Fitted N_{>=k} k^{1/2} / n at t_c.
  double critical_tail_constant() const { return 2 * curvature().theta / period(); }

 private:
  RuleSpec rule_;
  TheoryOptions opt_;
  SusceptibilityCurve curve_;
  CriticalWindow window_;
  RhoSolution rho_;
  QSolution q_;
  mutable std::once_flag curvature_once_;
  mutable CurvatureFit curvature_;
};

}  // namespace bsrlab
