// Window estimators built on the likelihood engine: posterior mean (MMSE),
// grid-refined argmax (ML and MAP), and the linear FIR baseline (LMMSE),
// plus the rejection-sampling oracle used to validate them.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qlut/likelihood.hpp"
#include "qlut/rng.hpp"
#include "qlut/signals.hpp"

namespace qlut {

enum class EstimatorKind { mmse, ml, map, lmmse };

const char* to_string(EstimatorKind k);
EstimatorKind estimator_kind_from_string(const std::string& name);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::mmse;
  QuadratureSpec quad{};
  // Forces the BPSK window model; when unset the exact one-transition
  // ensemble is used whenever the window fits inside one symbol.
  std::optional<BpskLikelihoodMode> bpsk_mode{};
};

// A point estimate of the newest clean sample. fallback is set when the
// window is impossible under the model (likelihood numerically zero across
// the whole x0 grid); the value is then the midpoint reconstruction of the
// newest code.
struct Estimate {
  double value = 0.0;
  bool fallback = false;
};

// Posterior mean: ratio of prior-weighted likelihood sums over the x0 grid.
// Denominators below 1e-300 trigger the fallback instead of a division.
Estimate estimate_mmse(const LikelihoodEvaluator& ev, const ObservationWindow& y);

// Maximum likelihood: coarse scan over the x0 grid, then golden-section
// refinement of the bracketing interval in u (x0 = A_hi cos u) down to
// quad().refine_tol. Exact ties break toward the smallest x0.
Estimate estimate_ml(const LikelihoodEvaluator& ev, const ObservationWindow& y);

// Maximum a-posteriori: the same search applied to p(y|x0) * density(x0).
// The default overload uses the scenario prior; a constant density makes
// this identical to estimate_ml. Searching in u keeps the arcsine prior's
// endpoint divergence off the grid nodes.
Estimate estimate_map(const LikelihoodEvaluator& ev, const ObservationWindow& y);
Estimate estimate_map(const LikelihoodEvaluator& ev, const ObservationWindow& y,
                      const std::function<double(double)>& density);

// Convenience one-shot forms.
Estimate estimate_mmse(const ScenarioModel& s, const ObservationWindow& y,
                       const QuadratureSpec& quad);
Estimate estimate_ml(const ScenarioModel& s, const ObservationWindow& y,
                     const QuadratureSpec& quad);
Estimate estimate_map(const ScenarioModel& s, const ObservationWindow& y,
                      const QuadratureSpec& quad);

// Linear correction filter x_hat = coeff' c(y) + offset fitted from
// analytically computed moments of the code process: c maps each code
// through the analysis codebook, first moments and the newest-sample-anchored
// lag moments come from the per-sample marginal tables, and the covariance
// is assembled as Toeplitz (the unconditional code process is stationary).
struct LmmseFilter {
  std::vector<double> codebook;  // value assigned to code k at index k-1
  std::vector<double> coeff;     // oldest-first, one tap per window position
  double offset = 0.0;
  double mean_x0 = 0.0;
  std::vector<double> mean_y;    // E[c(Y_t)], oldest-first
  std::vector<double> cov_yy;    // row-major covariance of c(Y)
  std::vector<double> cross;     // Cov(X0, c(Y_t)), oldest-first
  bool regularized = false;      // diagonal loading was needed to factorize

  double estimate(const ObservationWindow& y) const;
};

// Fits the filter by solving cov_yy * coeff = cross (Cholesky). A singular
// covariance is retried with diagonal loading 1e-10 * trace and flagged.
// The default codebook assigns code k the value k; predictions are invariant
// to any affine relabeling of the codebook.
LmmseFilter lmmse_fit(const LikelihoodEvaluator& ev,
                      std::vector<double> codebook = {});
LmmseFilter lmmse_fit(const ScenarioModel& s, const QuadratureSpec& quad);

// Ready-to-apply estimator for one scenario: owns the likelihood evaluator
// and, for the linear kind, the fitted filter. Application is pure and
// const, so one instance can serve concurrent lookups.
class WindowEstimator {
 public:
  WindowEstimator(const ScenarioModel& s, const EstimatorConfig& cfg);

  Estimate operator()(const ObservationWindow& y) const;

  EstimatorKind kind() const { return kind_; }
  const LikelihoodEvaluator& evaluator() const { return ev_; }
  const LmmseFilter* filter() const { return filter_ ? &*filter_ : nullptr; }

 private:
  EstimatorKind kind_;
  LikelihoodEvaluator ev_;
  std::optional<LmmseFilter> filter_;
};

// One independent window realization of the scenario: parameters drawn from
// the priors (phase uniform, BPSK symbol clock and bits random), noise added,
// samples quantized. x0 is the realized newest clean desired sample.
struct WindowSample {
  ObservationWindow y;
  double x0 = 0.0;
};

WindowSample draw_window(const ScenarioModel& s, Rng& rng);

struct McConditional {
  double mean = 0.0;
  double half_width = 0.0;  // three standard errors of the mean
  long long accepted = 0;
};

// Rejection-sampling estimate of E[x0 | y]: draws full scenario realizations,
// keeps those whose code window equals y, and averages the realized x0.
// Throws std::invalid_argument for trials < 10000 and std::runtime_error
// when fewer than 100 draws match.
McConditional mc_conditional_oracle(const ScenarioModel& s, const ObservationWindow& y,
                                    long long trials, Rng& rng);

}  // namespace qlut
