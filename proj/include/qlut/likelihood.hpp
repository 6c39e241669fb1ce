#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "qlut/quantizer.hpp"
#include "qlut/signals.hpp"

namespace qlut {

// One window of quantizer output codes, oldest sample first. Codes are
// 1-based (1 .. 2^b) to match Quantizer.
struct ObservationWindow {
  std::vector<int> codes;
};

// Node counts for the deterministic midpoint quadratures used when a prior
// places mass on an interval instead of a point. x0_nodes is the size of the
// u-substitution grid (x0 = A_hi * cos u, u uniform on (0, pi)); refine_tol
// is the golden-section tolerance (in u) used by grid-refining searches.
struct QuadratureSpec {
  int x0_nodes = 512;
  int phase_nodes = 64;
  int freq_nodes = 64;
  int amp_nodes = 16;
  double refine_tol = 1e-6;
};

// Exhaustive phase-pattern ensemble for a BPSK window no longer than one
// symbol: at most one transition can fall inside the window. rows[r][t] == 1
// means position t (oldest first) is phase-flipped in pattern r; probs[r] is
// the pattern probability under a uniformly random symbol boundary.
struct BpskCase2Ensemble {
  int n = 0;
  int tau = 0;
  std::vector<std::vector<std::uint8_t>> rows;
  std::vector<double> probs;
};

// case1 treats the whole window as one constant-phase tone (valid-window
// approximation); case2 mixes over the exact one-transition ensemble.
enum class BpskLikelihoodMode { case1, case2 };

// P(a < W < b) for W ~ N(0, sigma^2). sigma == 0 degenerates to an indicator
// on the interval, counting an exact endpoint hit as 1/2 (the metastable
// tie-break average). Accepts infinite endpoints. Throws if a > b or
// sigma < 0.
double gaussian_window_prob(double a, double b, double sigma);

// P(quantizer emits code k | pre-quantizer sample mean s) with Gaussian noise
// of deviation sigma: the Gaussian mass of cell k shifted by s. Throws if k
// is outside 1 .. levels().
double cond_prob_code(const Quantizer& q, int k, double s, double sigma);

// Probability that an N-sample window of an M-ary constant-envelope signal
// with symbol length tau samples contains no symbol transition, under a
// uniformly random symbol-clock offset and i.i.d. equiprobable symbols.
double tone_validity_prob(int M, int N, int tau);

// Builds the exact one-transition ensemble for window length N <= tau.
// Throws if N > tau (more than one transition could fall in the window).
BpskCase2Ensemble bpsk_case2_ensemble(int N, int tau);

// Stationary-phase reduction of a slow LFM interferer to a tone with an
// unknown frequency drawn from the sweep band. deviation_bound bounds the
// in-window frequency drift that the reduction ignores.
struct LfmPriorFragment {
  Interval freq;
  double amplitude = 0.0;
  double deviation_bound = 0.0;
};

LfmPriorFragment lfm_effective_prior(const LfmParams& p, int window);

// Marginal density of the newest clean sample x0 = A cos(theta) with theta
// uniform and A either fixed (arcsine density) or uniform on an interval
// (log-kernel mixture). The returned callable is 0 outside (-A_hi, A_hi).
std::function<double(double)> prior_x0(const PriorSpec& prior);

inline BpskLikelihoodMode default_bpsk_mode(const ScenarioModel& s) {
  return (s.desired_kind == DesiredKind::bpsk && s.window <= s.bpsk.tau)
             ? BpskLikelihoodMode::case2
             : BpskLikelihoodMode::case1;
}

// Evaluates p(y | x0): the probability of an observed code window given the
// newest clean desired sample, marginalized over everything the receiver
// does not know (desired phase branch and, per the prior, amplitude,
// frequency, interferer parameters, and BPSK transition placement).
class LikelihoodEvaluator {
 public:
  LikelihoodEvaluator(const ScenarioModel& s, const QuadratureSpec& quad,
                      BpskLikelihoodMode mode);
  LikelihoodEvaluator(const ScenarioModel& s, const QuadratureSpec& quad)
      : LikelihoodEvaluator(s, quad, default_bpsk_mode(s)) {}
  // BPSK with an explicit transition-pattern probability vector. The patterns
  // are fixed by the one-transition geometry (canonical prefix-flip rows);
  // only their probabilities may be re-weighted, e.g. to disable transition
  // hypotheses. Probabilities must be nonnegative and sum to 1.
  LikelihoodEvaluator(const ScenarioModel& s, const QuadratureSpec& quad,
                      const BpskCase2Ensemble& ensemble);

  int window() const { return n_; }
  int u_nodes() const { return static_cast<int>(u_.size()); }
  double u_at(int j) const { return u_[static_cast<size_t>(j)]; }
  double x0_at(int j) const { return x0_[static_cast<size_t>(j)]; }
  // Quadrature weight of node j under the x0 prior (sums to ~1).
  double prior_weight(int j) const { return rho_[static_cast<size_t>(j)]; }
  // Prior density p(x0) at node j (not weighted by the grid measure).
  double prior_density(int j) const { return prior_dens_[static_cast<size_t>(j)]; }
  double amp_hi() const { return amp_hi_; }
  double sigma() const { return sigma_; }
  const Quantizer& quantizer() const { return quant_; }
  BpskLikelihoodMode mode() const { return mode_; }
  const QuadratureSpec& quad() const { return quad_; }
  // Prior density p(x0) at an arbitrary point (0 outside the support).
  double prior_density_at(double x0) const { return dens_(x0); }

  double eval_u(const ObservationWindow& y, double u) const;
  double eval_x0(const ObservationWindow& y, double x0) const;
  // Likelihood at every grid node, out[j] = p(y | x0_at(j)).
  void eval_grid(const ObservationWindow& y, std::vector<double>& out) const;

  // Per-sample marginal code probabilities conditioned on x0:
  // table[(t * u_nodes() + j) * levels + (k - 1)] = P(Y_t = k | x0_at(j)).
  // Position t is oldest-first, matching ObservationWindow.
  std::vector<double> marginal_table() const;

 private:
  struct Workspace;

  void validate_window(const ObservationWindow& y) const;
  double eval_node(const ObservationWindow& y, double cu) const;
  double eval_prepared(const Workspace& ws, double cu) const;

  // Desired-amplitude nodes weighted by the conditional p(a | x0); for an
  // interval prior the arcsine kernel is flattened by substituting
  // a = sqrt(x0^2 + s^2), which turns the weight into ds / (pi a).
  template <typename Fn>
  void for_each_amp(double x0, Fn&& fn) const;

  int n_ = 0;
  double sigma_ = 0.0;
  double inv_sigma_ = 0.0;
  double amp_lo_ = 0.0;
  double amp_hi_ = 0.0;
  int amp_node_count_ = 1;
  std::function<double(double)> dens_;
  QuadratureSpec quad_;
  BpskLikelihoodMode mode_;
  Quantizer quant_;
  std::vector<double> thr_;
  std::vector<double> u_, x0_, rho_, prior_dens_;
  std::vector<double> f_cos_, f_sin_;  // [fi * n_ + t]
  double f_weight_ = 1.0;
  int f_count_ = 1;
  std::vector<double> z_;  // [mu * n_ + t]
  int mu_count_ = 1;
  double mu_weight_ = 1.0;
  std::vector<double> flip_prob_;
  int flip_rows_ = 1;
};

// One-shot p(y | x0). The mode-less overload picks the exact BPSK ensemble
// whenever it applies (desired is BPSK and the window fits in a symbol).
double likelihood_window(const ScenarioModel& s, const ObservationWindow& y,
                         double x0, const QuadratureSpec& quad,
                         BpskLikelihoodMode mode);
double likelihood_window(const ScenarioModel& s, const ObservationWindow& y,
                         double x0, const QuadratureSpec& quad);

}  // namespace qlut
