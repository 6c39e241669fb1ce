#include "qlut/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <utility>

namespace qlut {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kGolden = 0.61803398874989484820458683436564;  // (sqrt(5)-1)/2
constexpr double kMinDenominator = 1e-300;

double midpoint_fallback(const LikelihoodEvaluator& ev, const ObservationWindow& y) {
  return ev.quantizer().reconstruct(y.codes.back());
}

// Maximizes g over [lo, hi] by golden-section search, assuming the coarse
// grid already bracketed the maximum. Equal probe values keep the upper
// subinterval, so plateaus resolve toward larger u (smaller x0), matching
// the grid scan's tie-break.
template <typename G>
double refine_argmax_u(double lo, double hi, double tol_u, G&& g) {
  double x1 = hi - kGolden * (hi - lo);
  double x2 = lo + kGolden * (hi - lo);
  double g1 = g(x1);
  double g2 = g(x2);
  while (hi - lo > tol_u) {
    if (g1 > g2) {
      hi = x2;
      x2 = x1;
      g2 = g1;
      x1 = hi - kGolden * (hi - lo);
      g1 = g(x1);
    } else {
      lo = x1;
      x1 = x2;
      g1 = g2;
      x2 = lo + kGolden * (hi - lo);
      g2 = g(x2);
    }
  }
  return 0.5 * (lo + hi);
}

// Shared grid-scan + refinement body for ML and MAP; weight(x0) scales the
// likelihood (1 for ML). Zero likelihood short-circuits the weight so an
// unbounded prior density never multiplies a zero.
template <typename W>
Estimate argmax_weighted(const LikelihoodEvaluator& ev, const ObservationWindow& y,
                         W&& weight) {
  std::vector<double> like;
  ev.eval_grid(y, like);
  const int nu = ev.u_nodes();
  std::vector<double> score(nu);
  for (int j = 0; j < nu; ++j)
    score[j] = like[j] > 0.0 ? like[j] * weight(ev.x0_at(j)) : 0.0;
  int best = 0;
  for (int j = 1; j < nu; ++j)
    if (score[j] >= score[best]) best = j;  // ties move toward smaller x0
  if (!(score[best] > 0.0)) return {midpoint_fallback(ev, y), true};

  const double lo = best > 0 ? ev.u_at(best - 1) : 0.0;
  const double hi = best + 1 < nu ? ev.u_at(best + 1) : M_PI;
  const double amp = ev.amp_hi();
  double u = refine_argmax_u(lo, hi, ev.quad().refine_tol, [&](double uu) {
    double l = ev.eval_u(y, uu);
    return l > 0.0 ? l * weight(amp * std::cos(uu)) : 0.0;
  });
  return {amp * std::cos(u), false};
}

// In-place Cholesky solve of a * x = b for symmetric a (row-major). Returns
// false when a pivot falls below 1e-12 of the largest diagonal entry, so a
// rank-deficient matrix cannot slip through on a rounding ulp.
bool cholesky_solve(std::vector<double> a, int n, std::vector<double> b,
                    std::vector<double>& out) {
  double dmax = 0.0;
  for (int i = 0; i < n; ++i) dmax = std::max(dmax, a[static_cast<size_t>(i) * n + i]);
  const double min_pivot = 1e-12 * dmax;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
      if (i == j) {
        if (!(s > min_pivot)) return false;
        a[static_cast<size_t>(i) * n + i] = std::sqrt(s);
      } else {
        a[static_cast<size_t>(i) * n + j] = s / a[static_cast<size_t>(j) * n + j];
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= a[static_cast<size_t>(i) * n + k] * b[k];
    b[i] = s / a[static_cast<size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= a[static_cast<size_t>(k) * n + i] * b[k];
    b[i] = s / a[static_cast<size_t>(i) * n + i];
  }
  out = std::move(b);
  return true;
}

}  // namespace

const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::mmse: return "mmse";
    case EstimatorKind::ml: return "ml";
    case EstimatorKind::map: return "map";
    case EstimatorKind::lmmse: return "lmmse";
  }
  throw std::invalid_argument("to_string: unknown estimator kind");
}

EstimatorKind estimator_kind_from_string(const std::string& name) {
  if (name == "mmse") return EstimatorKind::mmse;
  if (name == "ml") return EstimatorKind::ml;
  if (name == "map") return EstimatorKind::map;
  if (name == "lmmse") return EstimatorKind::lmmse;
  throw std::invalid_argument("estimator_kind_from_string: unknown kind '" + name + "'");
}

Estimate estimate_mmse(const LikelihoodEvaluator& ev, const ObservationWindow& y) {
  std::vector<double> like;
  ev.eval_grid(y, like);
  double num = 0.0;
  double den = 0.0;
  for (int j = 0; j < ev.u_nodes(); ++j) {
    double w = ev.prior_weight(j) * like[j];
    num += w * ev.x0_at(j);
    den += w;
  }
  if (!(den > kMinDenominator)) return {midpoint_fallback(ev, y), true};
  return {num / den, false};
}

Estimate estimate_ml(const LikelihoodEvaluator& ev, const ObservationWindow& y) {
  return argmax_weighted(ev, y, [](double) { return 1.0; });
}

Estimate estimate_map(const LikelihoodEvaluator& ev, const ObservationWindow& y) {
  return argmax_weighted(ev, y, [&ev](double x0) { return ev.prior_density_at(x0); });
}

Estimate estimate_map(const LikelihoodEvaluator& ev, const ObservationWindow& y,
                      const std::function<double(double)>& density) {
  if (!density) throw std::invalid_argument("estimate_map: density must be callable");
  return argmax_weighted(ev, y, [&density](double x0) { return density(x0); });
}

Estimate estimate_mmse(const ScenarioModel& s, const ObservationWindow& y,
                       const QuadratureSpec& quad) {
  return estimate_mmse(LikelihoodEvaluator(s, quad), y);
}

Estimate estimate_ml(const ScenarioModel& s, const ObservationWindow& y,
                     const QuadratureSpec& quad) {
  return estimate_ml(LikelihoodEvaluator(s, quad), y);
}

Estimate estimate_map(const ScenarioModel& s, const ObservationWindow& y,
                      const QuadratureSpec& quad) {
  return estimate_map(LikelihoodEvaluator(s, quad), y);
}

double LmmseFilter::estimate(const ObservationWindow& y) const {
  if (y.codes.size() != coeff.size())
    throw std::invalid_argument("LmmseFilter: window length mismatch");
  double acc = offset;
  for (size_t t = 0; t < coeff.size(); ++t) {
    int k = y.codes[t];
    if (k < 1 || k > static_cast<int>(codebook.size()))
      throw std::invalid_argument("LmmseFilter: code out of range");
    acc += coeff[t] * codebook[static_cast<size_t>(k - 1)];
  }
  return acc;
}

LmmseFilter lmmse_fit(const LikelihoodEvaluator& ev, std::vector<double> codebook) {
  const int levels = ev.quantizer().levels();
  if (codebook.empty()) {
    codebook.resize(static_cast<size_t>(levels));
    for (int k = 0; k < levels; ++k) codebook[static_cast<size_t>(k)] = k + 1;
  }
  if (static_cast<int>(codebook.size()) != levels)
    throw std::invalid_argument("lmmse_fit: codebook size must match quantizer levels");

  const int n = ev.window();
  const int nu = ev.u_nodes();
  const std::vector<double> table = ev.marginal_table();

  // Conditional codebook mean per position and grid node; the conditional
  // second moment is only needed at the newest position, which anchors the
  // lag moments.
  std::vector<double> g(static_cast<size_t>(n) * nu);
  std::vector<double> h(static_cast<size_t>(nu));
  for (int t = 0; t < n; ++t) {
    for (int j = 0; j < nu; ++j) {
      const double* cell = &table[(static_cast<size_t>(t) * nu + j) * levels];
      double m1 = 0.0;
      for (int k = 0; k < levels; ++k) m1 += codebook[static_cast<size_t>(k)] * cell[k];
      g[static_cast<size_t>(t) * nu + j] = m1;
      if (t == n - 1) {
        double m2 = 0.0;
        for (int k = 0; k < levels; ++k)
          m2 += codebook[static_cast<size_t>(k)] * codebook[static_cast<size_t>(k)] * cell[k];
        h[static_cast<size_t>(j)] = m2;
      }
    }
  }

  double wsum = 0.0;
  for (int j = 0; j < nu; ++j) wsum += ev.prior_weight(j);
  const double wnorm = 1.0 / wsum;

  LmmseFilter f;
  f.codebook = std::move(codebook);
  f.mean_y.assign(static_cast<size_t>(n), 0.0);
  f.cross.assign(static_cast<size_t>(n), 0.0);
  f.cov_yy.assign(static_cast<size_t>(n) * n, 0.0);

  double ex = 0.0;
  for (int j = 0; j < nu; ++j) ex += ev.prior_weight(j) * ev.x0_at(j);
  ex *= wnorm;
  f.mean_x0 = ex;

  for (int t = 0; t < n; ++t) {
    double m = 0.0;
    double xc = 0.0;
    for (int j = 0; j < nu; ++j) {
      double w = ev.prior_weight(j);
      m += w * g[static_cast<size_t>(t) * nu + j];
      xc += w * ev.x0_at(j) * g[static_cast<size_t>(t) * nu + j];
    }
    f.mean_y[static_cast<size_t>(t)] = m * wnorm;
    f.cross[static_cast<size_t>(t)] = xc * wnorm - ex * m * wnorm;
  }

  // Lag moments r[l] = E[c(Y_0) c(Y_{-l})] anchored at the newest position;
  // the unconditional code process is stationary, so the second-moment
  // matrix is Toeplitz in the lag.
  std::vector<double> r(static_cast<size_t>(n), 0.0);
  for (int l = 0; l < n; ++l) {
    double acc = 0.0;
    for (int j = 0; j < nu; ++j) {
      double w = ev.prior_weight(j);
      acc += l == 0 ? w * h[static_cast<size_t>(j)]
                    : w * g[static_cast<size_t>(n - 1) * nu + j] *
                          g[static_cast<size_t>(n - 1 - l) * nu + j];
    }
    r[static_cast<size_t>(l)] = acc * wnorm;
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      f.cov_yy[static_cast<size_t>(i) * n + j] =
          r[static_cast<size_t>(std::abs(i - j))] -
          f.mean_y[static_cast<size_t>(i)] * f.mean_y[static_cast<size_t>(j)];

  if (!cholesky_solve(f.cov_yy, n, f.cross, f.coeff)) {
    f.regularized = true;
    double tr = 0.0;
    for (int i = 0; i < n; ++i) tr += f.cov_yy[static_cast<size_t>(i) * n + i];
    std::vector<double> loaded = f.cov_yy;
    for (int i = 0; i < n; ++i) loaded[static_cast<size_t>(i) * n + i] += 1e-10 * tr;
    if (tr <= 0.0 || !cholesky_solve(loaded, n, f.cross, f.coeff))
      f.coeff.assign(static_cast<size_t>(n), 0.0);
  }
  f.offset = f.mean_x0;
  for (int t = 0; t < n; ++t)
    f.offset -= f.coeff[static_cast<size_t>(t)] * f.mean_y[static_cast<size_t>(t)];
  return f;
}

LmmseFilter lmmse_fit(const ScenarioModel& s, const QuadratureSpec& quad) {
  return lmmse_fit(LikelihoodEvaluator(s, quad));
}

WindowEstimator::WindowEstimator(const ScenarioModel& s, const EstimatorConfig& cfg)
    : kind_(cfg.kind),
      ev_(cfg.bpsk_mode ? LikelihoodEvaluator(s, cfg.quad, *cfg.bpsk_mode)
                        : LikelihoodEvaluator(s, cfg.quad)) {
  if (kind_ == EstimatorKind::lmmse) filter_ = lmmse_fit(ev_);
}

Estimate WindowEstimator::operator()(const ObservationWindow& y) const {
  switch (kind_) {
    case EstimatorKind::mmse: return estimate_mmse(ev_, y);
    case EstimatorKind::ml: return estimate_ml(ev_, y);
    case EstimatorKind::map: return estimate_map(ev_, y);
    case EstimatorKind::lmmse: return {filter_->estimate(y), false};
  }
  throw std::logic_error("WindowEstimator: unknown estimator kind");
}

WindowSample draw_window(const ScenarioModel& s, Rng& rng) {
  s.validate();
  const int n = s.window;
  auto draw_iv = [&rng](const Interval& iv) {
    return iv.point() ? iv.lo : rng.uniform(iv.lo, iv.hi);
  };
  const double a = draw_iv(s.prior.amp);
  const double f = draw_iv(s.prior.freq);
  const double phase = rng.uniform(0.0, kTwoPi);

  std::vector<double> desired;
  if (s.desired_kind == DesiredKind::tone) {
    desired = gen_tone(ToneParams{a, f, phase}, -(n - 1), n);
  } else {
    BpskParams p = s.bpsk;
    p.amplitude = a;
    p.frequency = f;
    p.phase = phase;
    p.offset = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(p.tau)));
    p.bits.clear();
    p.bit_seed = rng.bits();
    desired = gen_bpsk(p, -(n - 1), n);
  }

  std::vector<double> intf(static_cast<size_t>(n), 0.0);
  if (s.interferer_kind == InterfererKind::tone) {
    ToneParams z;
    z.amplitude = draw_iv(s.prior.intf_amp);
    z.frequency = draw_iv(s.prior.intf_freq);
    z.phase = rng.uniform(0.0, kTwoPi);
    intf = gen_tone(z, -(n - 1), n);
  } else if (s.interferer_kind == InterfererKind::lfm) {
    LfmParams z = s.intf_lfm;
    z.phase = rng.uniform(0.0, kTwoPi);
    long long shift = static_cast<long long>(
        rng.uniform_int(static_cast<std::uint64_t>(z.repeat_interval)));
    intf = gen_lfm(z, shift - (n - 1), n);
  }

  WindowSample out;
  out.x0 = desired.back();
  out.y.codes.resize(static_cast<size_t>(n));
  for (int t = 0; t < n; ++t) {
    double w = s.prior.sigma > 0 ? s.prior.sigma * rng.gauss() : 0.0;
    out.y.codes[static_cast<size_t>(t)] = s.quantizer.quantize(desired[static_cast<size_t>(t)] + intf[static_cast<size_t>(t)] + w, rng);
  }
  return out;
}

McConditional mc_conditional_oracle(const ScenarioModel& s, const ObservationWindow& y,
                                    long long trials, Rng& rng) {
  if (trials < 10000)
    throw std::invalid_argument("mc_conditional_oracle: trials must be >= 10000");
  s.validate();
  if (static_cast<int>(y.codes.size()) != s.window)
    throw std::invalid_argument("mc_conditional_oracle: window length mismatch");
  for (int k : y.codes)
    if (k < 1 || k > s.quantizer.levels())
      throw std::invalid_argument("mc_conditional_oracle: code out of range");

  double sum = 0.0;
  double sumsq = 0.0;
  long long accepted = 0;
  for (long long i = 0; i < trials; ++i) {
    WindowSample w = draw_window(s, rng);
    if (w.y.codes == y.codes) {
      ++accepted;
      sum += w.x0;
      sumsq += w.x0 * w.x0;
    }
  }
  if (accepted < 100)
    throw std::runtime_error("mc_conditional_oracle: insufficient matching samples");

  McConditional out;
  out.accepted = accepted;
  out.mean = sum / static_cast<double>(accepted);
  double var = (sumsq - static_cast<double>(accepted) * out.mean * out.mean) /
               static_cast<double>(accepted - 1);
  if (var < 0.0) var = 0.0;
  out.half_width = 3.0 * std::sqrt(var / static_cast<double>(accepted));
  return out;
}

}  // namespace qlut
