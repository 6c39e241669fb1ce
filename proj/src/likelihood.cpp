#include "qlut/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace qlut {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr int kMaxWindow = 64;

// Standard normal CDF on a cubic-Hermite table over the negative half-line,
// reflected for positive arguments so that cdf(-t) == 1 - cdf(t) holds
// bit-for-bit (window-mirroring symmetry relies on it). Interpolation error
// scales with the local density, so tail values keep relative accuracy.
class NormalCdf {
 public:
  NormalCdf() {
    h_ = -kLo / kNodes;
    for (int i = 0; i <= kNodes; ++i) {
      double t = kLo + i * h_;
      y_[i] = 0.5 * std::erfc(-t * kInvSqrt2);
      d_[i] = std::exp(-0.5 * t * t) * 0.39894228040143267794;  // pdf
    }
  }

  double operator()(double t) const {
    if (t > 0.0) return 1.0 - half(-t);
    return half(t);
  }

  // P(tlo < T < thi) without cancellation: tail cells difference same-side
  // lower-tail values, straddling cells subtract both tails from 1. Mirrored
  // arguments (-thi, -tlo) produce bit-identical results.
  double mass(double tlo, double thi) const {
    if (thi <= 0.0) return half(thi) - half(tlo);
    if (tlo >= 0.0) return half(-tlo) - half(-thi);
    return 1.0 - (half(tlo) + half(-thi));
  }

 private:
  double half(double t) const {  // t <= 0
    if (t <= kLo) return 0.0;
    double z = (t - kLo) / h_;
    int i = static_cast<int>(z);
    if (i >= kNodes) i = kNodes - 1;
    double v = z - i;
    double v2 = v * v, v3 = v2 * v;
    double d0 = d_[i] * h_, d1 = d_[i + 1] * h_;
    return y_[i] * (2 * v3 - 3 * v2 + 1) + d0 * (v3 - 2 * v2 + v) +
           y_[i + 1] * (3 * v2 - 2 * v3) + d1 * (v3 - v2);
  }

  static constexpr double kLo = -8.5;
  static constexpr int kNodes = 4096;
  double y_[kNodes + 1], d_[kNodes + 1], h_;
};

const NormalCdf& normal_cdf() {
  static const NormalCdf table;
  return table;
}

double step_mass(double t) {  // sigma -> 0 limit of the CDF
  if (t > 0) return 1.0;
  if (t == 0) return 0.5;
  return 0.0;
}

}  // namespace

double gaussian_window_prob(double a, double b, double sigma) {
  if (a > b) throw std::invalid_argument("gaussian_window_prob: interval reversed");
  if (sigma < 0) throw std::invalid_argument("gaussian_window_prob: sigma must be >= 0");
  if (sigma == 0) return step_mass(b) - step_mass(a);
  double s = kInvSqrt2 / sigma;
  double eb = std::isinf(b) ? (b > 0 ? 1.0 : -1.0) : std::erf(b * s);
  double ea = std::isinf(a) ? (a > 0 ? 1.0 : -1.0) : std::erf(a * s);
  return 0.5 * (eb - ea);
}

double cond_prob_code(const Quantizer& q, int k, double s, double sigma) {
  if (k < 1 || k > q.levels())
    throw std::invalid_argument("cond_prob_code: code index out of range");
  return gaussian_window_prob(q.lower_edge(k) - s, q.upper_edge(k) - s, sigma);
}

double tone_validity_prob(int M, int N, int tau) {
  if (M < 2) throw std::invalid_argument("tone_validity_prob: M must be >= 2");
  if (N < 1) throw std::invalid_argument("tone_validity_prob: N must be >= 1");
  if (tau < 1) throw std::invalid_argument("tone_validity_prob: tau must be >= 1");
  int ceil_nt = (N + tau - 1) / tau;
  double frac = static_cast<double>(N - 1) / tau;
  return std::pow(1.0 / M, ceil_nt) * (1.0 + (M - 1) * (ceil_nt - frac));
}

BpskCase2Ensemble bpsk_case2_ensemble(int N, int tau) {
  if (N < 1) throw std::invalid_argument("bpsk_case2_ensemble: N must be >= 1");
  if (N > tau)
    throw std::invalid_argument(
        "bpsk_case2_ensemble: window exceeds symbol length (N > tau), one-transition "
        "guarantee does not hold");
  BpskCase2Ensemble e;
  e.n = N;
  e.tau = tau;
  e.rows.assign(static_cast<size_t>(N), std::vector<std::uint8_t>(static_cast<size_t>(N), 0));
  // Row r (0-based) flips every position strictly older than r; row 0 is the
  // no-transition pattern.
  for (int r = 1; r < N; ++r)
    for (int t = 0; t < r; ++t) e.rows[static_cast<size_t>(r)][static_cast<size_t>(t)] = 1;
  e.probs.assign(static_cast<size_t>(N), 1.0 / (2.0 * tau));
  e.probs[0] = 1.0 - static_cast<double>(N - 1) / (2.0 * tau);
  return e;
}

LfmPriorFragment lfm_effective_prior(const LfmParams& p, int window) {
  if (window < 1) throw std::invalid_argument("lfm_effective_prior: window must be >= 1");
  LfmPriorFragment out;
  out.freq.lo = p.center_frequency - p.sweep_width / 2.0;
  out.freq.hi = p.center_frequency + p.sweep_width / 2.0;
  if (out.freq.lo < 0.0 || out.freq.hi > 0.5)
    throw std::invalid_argument("lfm_effective_prior: sweep band exceeds [0, 0.5]");
  out.amplitude = p.amplitude;
  out.deviation_bound =
      p.sweep_width * window / (2.0 * static_cast<double>(p.repeat_interval));
  return out;
}

std::function<double(double)> prior_x0(const PriorSpec& prior) {
  double lo = prior.amp.lo, hi = prior.amp.hi;
  if (hi <= 0 || lo < 0 || lo > hi)
    throw std::invalid_argument("prior_x0: invalid amplitude interval");
  if (lo == hi) {
    double amp = hi;
    return [amp](double x) {
      double d = amp * amp - x * x;
      if (d > 0) return 1.0 / (M_PI * std::sqrt(d));
      if (d == 0) return std::numeric_limits<double>::infinity();
      return 0.0;
    };
  }
  return [lo, hi](double x) {
    double ax = std::abs(x);
    if (ax >= hi) return 0.0;
    double alpha = std::max(lo, ax);
    double shi = std::sqrt(hi * hi - x * x);
    double salo = std::sqrt(std::max(0.0, alpha * alpha - x * x));
    return std::log((hi + shi) / (alpha + salo)) / (M_PI * (hi - lo));
  };
}

struct LikelihoodEvaluator::Workspace {
  double lo[kMaxWindow];
  double hi[kMaxWindow];
};

// Visits (a, weight) pairs approximating the conditional p(a | x0). Point
// prior: the single amplitude with weight 1. Interval prior: p(a | x0) is
// proportional to 1/(pi sqrt(a^2 - x0^2)) on a > |x0|; substituting
// a = sqrt(x0^2 + s^2) gives the smooth weight ds / (pi a), normalized by the
// marginal density p(x0). Weights sum to ~1 wherever the prior has support.
template <typename Fn>
void LikelihoodEvaluator::for_each_amp(double x0, Fn&& fn) const {
  if (amp_lo_ == amp_hi_) {
    if (std::abs(x0) <= amp_hi_) fn(amp_hi_, 1.0);
    return;
  }
  double px = dens_(x0);
  if (!(px > 0.0) || std::isinf(px)) return;
  double ax = std::abs(x0);
  double alo = std::max(amp_lo_, ax);
  double s_lo = std::sqrt(std::max(0.0, alo * alo - x0 * x0));
  double s_hi = std::sqrt(std::max(0.0, amp_hi_ * amp_hi_ - x0 * x0));
  if (!(s_hi > s_lo)) return;
  double ds = (s_hi - s_lo) / amp_node_count_;
  double norm = M_PI * (amp_hi_ - amp_lo_) * px;
  for (int i = 0; i < amp_node_count_; ++i) {
    double sv = s_lo + (i + 0.5) * ds;
    double a = std::sqrt(x0 * x0 + sv * sv);
    fn(a, ds / (a * norm));
  }
}

LikelihoodEvaluator::LikelihoodEvaluator(const ScenarioModel& s,
                                         const QuadratureSpec& quad,
                                         BpskLikelihoodMode mode)
    : quad_(quad), mode_(mode), quant_(s.quantizer) {
  s.validate();
  n_ = s.window;
  if (n_ < 1) throw std::invalid_argument("LikelihoodEvaluator: window must be >= 1");
  if (n_ > kMaxWindow)
    throw std::invalid_argument("LikelihoodEvaluator: window exceeds supported maximum");
  sigma_ = s.prior.sigma;
  inv_sigma_ = sigma_ > 0 ? 1.0 / sigma_ : 0.0;
  thr_ = quant_.thresholds();
  amp_hi_ = s.prior.amp.hi;
  if (amp_hi_ <= 0)
    throw std::invalid_argument("LikelihoodEvaluator: amplitude prior upper bound must be > 0");

  auto need_nodes = [](const Interval& iv, int nodes, const char* what) {
    if (iv.point()) {
      if (nodes < 1)
        throw std::invalid_argument(std::string("QuadratureSpec: ") + what +
                                    " node count must be >= 1");
    } else if (nodes < 2) {
      throw std::invalid_argument(std::string("QuadratureSpec: ") + what +
                                  " node count must be >= 2 for interval priors");
    }
  };

  // x0 grid in u with x0 = A_H cos u; midpoint nodes avoid the endpoints.
  if (quad.x0_nodes < 2)
    throw std::invalid_argument("QuadratureSpec: x0 node count must be >= 2");
  int nu = quad.x0_nodes;
  u_.resize(nu);
  x0_.resize(nu);
  rho_.resize(nu);
  prior_dens_.resize(nu);
  dens_ = prior_x0(s.prior);
  double du = M_PI / nu;
  bool point_amp = s.prior.amp.point();
  for (int j = 0; j < nu; ++j) {
    u_[j] = (j + 0.5) * du;
    x0_[j] = amp_hi_ * std::cos(u_[j]);
    prior_dens_[j] = dens_(x0_[j]);
    rho_[j] = point_amp ? 1.0 / nu
                        : prior_dens_[j] * amp_hi_ * std::sin(u_[j]) * du;
  }

  // Desired amplitude discretization (nodes are placed per evaluation point,
  // see for_each_amp).
  need_nodes(s.prior.amp, quad.amp_nodes, "amplitude");
  amp_lo_ = s.prior.amp.lo;
  amp_node_count_ = point_amp ? 1 : quad.amp_nodes;

  // Desired frequency nodes and per-sample carrier trig (n_t = t - (N-1)).
  need_nodes(s.prior.freq, quad.freq_nodes, "frequency");
  std::vector<double> f_nodes;
  if (s.prior.freq.point()) {
    f_nodes = {s.prior.freq.lo};
    f_weight_ = 1.0;
  } else {
    f_nodes.resize(quad.freq_nodes);
    double w = s.prior.freq.width() / quad.freq_nodes;
    for (int i = 0; i < quad.freq_nodes; ++i) f_nodes[i] = s.prior.freq.lo + (i + 0.5) * w;
    f_weight_ = 1.0 / quad.freq_nodes;
  }
  f_count_ = static_cast<int>(f_nodes.size());
  f_cos_.resize(static_cast<size_t>(f_count_) * n_);
  f_sin_.resize(static_cast<size_t>(f_count_) * n_);
  for (int fi = 0; fi < f_count_; ++fi) {
    for (int t = 0; t < n_; ++t) {
      double ang = kTwoPi * f_nodes[fi] * (t - (n_ - 1));
      f_cos_[static_cast<size_t>(fi) * n_ + t] = std::cos(ang);
      f_sin_[static_cast<size_t>(fi) * n_ + t] = std::sin(ang);
    }
  }

  // Interferer nodes: tone approximation with uniform phase; LFM maps to a
  // frequency interval upstream (scenario assembly or lfm_effective_prior).
  if (s.interferer_kind == InterfererKind::none) {
    mu_count_ = 1;
    mu_weight_ = 1.0;
    z_.assign(static_cast<size_t>(n_), 0.0);
  } else {
    need_nodes(s.prior.intf_amp, quad.amp_nodes, "interferer amplitude");
    need_nodes(s.prior.intf_freq, quad.freq_nodes, "interferer frequency");
    if (quad.phase_nodes < 2)
      throw std::invalid_argument("QuadratureSpec: interferer phase node count must be >= 2");
    std::vector<double> za, zf;
    if (s.prior.intf_amp.point()) {
      za = {s.prior.intf_amp.lo};
    } else {
      za.resize(quad.amp_nodes);
      double w = s.prior.intf_amp.width() / quad.amp_nodes;
      for (int i = 0; i < quad.amp_nodes; ++i) za[i] = s.prior.intf_amp.lo + (i + 0.5) * w;
    }
    if (s.prior.intf_freq.point()) {
      zf = {s.prior.intf_freq.lo};
    } else {
      zf.resize(quad.freq_nodes);
      double w = s.prior.intf_freq.width() / quad.freq_nodes;
      for (int i = 0; i < quad.freq_nodes; ++i) zf[i] = s.prior.intf_freq.lo + (i + 0.5) * w;
    }
    int np = quad.phase_nodes;
    mu_count_ = static_cast<int>(za.size() * zf.size()) * np;
    mu_weight_ = 1.0 / mu_count_;
    z_.resize(static_cast<size_t>(mu_count_) * n_);
    size_t mu = 0;
    for (double a : za) {
      for (double f : zf) {
        for (int c = 0; c < np; ++c) {
          double phase = (c + 0.5) * kTwoPi / np;
          for (int t = 0; t < n_; ++t)
            z_[mu * n_ + t] = a * std::cos(kTwoPi * f * (t - (n_ - 1)) + phase);
          ++mu;
        }
      }
    }
  }

  // Phase-transition ensemble (exact one-transition BPSK windows).
  if (s.desired_kind == DesiredKind::bpsk && mode_ == BpskLikelihoodMode::case2) {
    BpskCase2Ensemble e = bpsk_case2_ensemble(n_, s.bpsk.tau);
    flip_rows_ = n_;
    flip_prob_ = e.probs;
  } else {
    flip_rows_ = 1;
    flip_prob_ = {1.0};
  }
}

LikelihoodEvaluator::LikelihoodEvaluator(const ScenarioModel& s,
                                         const QuadratureSpec& quad,
                                         const BpskCase2Ensemble& ensemble)
    : LikelihoodEvaluator(s, quad, BpskLikelihoodMode::case2) {
  if (s.desired_kind != DesiredKind::bpsk)
    throw std::invalid_argument(
        "LikelihoodEvaluator: ensemble override requires a bpsk scenario");
  if (ensemble.n != n_ || static_cast<int>(ensemble.probs.size()) != n_ ||
      static_cast<int>(ensemble.rows.size()) != n_)
    throw std::invalid_argument("LikelihoodEvaluator: ensemble shape does not match window");
  double sum = 0.0;
  for (int r = 0; r < n_; ++r) {
    const auto& row = ensemble.rows[static_cast<size_t>(r)];
    if (static_cast<int>(row.size()) != n_)
      throw std::invalid_argument("LikelihoodEvaluator: ensemble row length mismatch");
    for (int t = 0; t < n_; ++t)
      if ((row[static_cast<size_t>(t)] != 0) != (t < r))
        throw std::invalid_argument(
            "LikelihoodEvaluator: ensemble rows must be the canonical prefix-flip patterns");
    if (ensemble.probs[static_cast<size_t>(r)] < 0)
      throw std::invalid_argument("LikelihoodEvaluator: ensemble probabilities must be >= 0");
    sum += ensemble.probs[static_cast<size_t>(r)];
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("LikelihoodEvaluator: ensemble probabilities must sum to 1");
  flip_prob_ = ensemble.probs;
}

void LikelihoodEvaluator::validate_window(const ObservationWindow& y) const {
  if (static_cast<int>(y.codes.size()) != n_)
    throw std::invalid_argument("likelihood_window: window length does not match scenario");
  for (int c : y.codes)
    if (c < 1 || c > quant_.levels())
      throw std::invalid_argument("likelihood_window: code index out of range");
}

double LikelihoodEvaluator::eval_node(const ObservationWindow& y, double cu) const {
  Workspace ws;
  for (int t = 0; t < n_; ++t) {
    ws.lo[t] = thr_[static_cast<size_t>(y.codes[t]) - 1];
    ws.hi[t] = thr_[static_cast<size_t>(y.codes[t])];
  }
  return eval_prepared(ws, cu);
}

double LikelihoodEvaluator::eval_prepared(const Workspace& ws, double cu) const {
  const NormalCdf& cdf = normal_cdf();
  const int N = n_;
  const bool zero_sigma = sigma_ == 0.0;
  auto cell = [&](double lo, double hi, double sv) {
    if (zero_sigma) return step_mass(hi - sv) - step_mass(lo - sv);
    return cdf.mass((lo - sv) * inv_sigma_, (hi - sv) * inv_sigma_);
  };

  double acc_a = 0.0;
  for_each_amp(amp_hi_ * cu, [&](double a, double w_a) {
    double c_phi = std::clamp(amp_hi_ * cu / a, -1.0, 1.0);
    double s_phi = std::sqrt(std::max(0.0, 1.0 - c_phi * c_phi));
    double acc_f = 0.0;
    for (int fi = 0; fi < f_count_; ++fi) {
      const double* fc = &f_cos_[static_cast<size_t>(fi) * N];
      const double* fs = &f_sin_[static_cast<size_t>(fi) * N];
      double acc_br = 0.0;
      for (int br = 0; br < 2; ++br) {
        double sin_phi = br == 0 ? -s_phi : s_phi;
        double x[kMaxWindow];
        for (int t = 0; t < N; ++t) x[t] = a * (fc[t] * c_phi - fs[t] * sin_phi);
        double acc_mu = 0.0;
        if (flip_rows_ == 1) {
          for (int mu = 0; mu < mu_count_; ++mu) {
            const double* zt = &z_[static_cast<size_t>(mu) * N];
            double prod = 1.0;
            for (int t = 0; t < N; ++t) {
              prod *= cell(ws.lo[t], ws.hi[t], x[t] + zt[t]);
              if (prod == 0.0) break;
            }
            acc_mu += prod;
          }
        } else {
          double p0[kMaxWindow], p1[kMaxWindow], suf[kMaxWindow + 1];
          for (int mu = 0; mu < mu_count_; ++mu) {
            const double* zt = &z_[static_cast<size_t>(mu) * N];
            for (int t = 0; t < N; ++t) {
              p0[t] = cell(ws.lo[t], ws.hi[t], x[t] + zt[t]);
              p1[t] = cell(ws.lo[t], ws.hi[t], -x[t] + zt[t]);
            }
            suf[N] = 1.0;
            for (int t = N - 1; t >= 0; --t) suf[t] = suf[t + 1] * p0[t];
            double rows = flip_prob_[0] * suf[0];
            double pre = 1.0;
            for (int r = 1; r < flip_rows_; ++r) {
              pre *= p1[r - 1];
              if (pre == 0.0) break;
              rows += flip_prob_[static_cast<size_t>(r)] * pre * suf[r];
            }
            acc_mu += rows;
          }
        }
        acc_br += acc_mu;
      }
      acc_f += 0.5 * acc_br;
    }
    acc_a += w_a * acc_f;
  });
  return acc_a * f_weight_ * mu_weight_;
}

double LikelihoodEvaluator::eval_u(const ObservationWindow& y, double u) const {
  validate_window(y);
  return eval_node(y, std::cos(u));
}

double LikelihoodEvaluator::eval_x0(const ObservationWindow& y, double x0) const {
  validate_window(y);
  if (std::abs(x0) > amp_hi_) return 0.0;
  return eval_node(y, x0 / amp_hi_);
}

void LikelihoodEvaluator::eval_grid(const ObservationWindow& y,
                                    std::vector<double>& out) const {
  validate_window(y);
  Workspace ws;
  for (int t = 0; t < n_; ++t) {
    ws.lo[t] = thr_[static_cast<size_t>(y.codes[t]) - 1];
    ws.hi[t] = thr_[static_cast<size_t>(y.codes[t])];
  }
  out.resize(u_.size());
  for (size_t j = 0; j < u_.size(); ++j)
    out[j] = eval_prepared(ws, x0_[j] / amp_hi_);
}

std::vector<double> LikelihoodEvaluator::marginal_table() const {
  const NormalCdf& cdf = normal_cdf();
  const int N = n_, K = quant_.levels();
  const int nu = static_cast<int>(u_.size());
  const bool zero_sigma = sigma_ == 0.0;
  std::vector<double> out(static_cast<size_t>(N) * nu * K, 0.0);

  // q_t: total ensemble probability that position t is phase-flipped.
  std::vector<double> qflip(static_cast<size_t>(N), 0.0);
  for (int r = 1; r < flip_rows_; ++r)
    for (int t = 0; t < r; ++t) qflip[static_cast<size_t>(t)] += flip_prob_[static_cast<size_t>(r)];

  for (int j = 0; j < nu; ++j) {
    double x0 = x0_[static_cast<size_t>(j)];
    for_each_amp(x0, [&](double a, double w_a) {
      double c_phi = std::clamp(x0 / a, -1.0, 1.0);
      double s_phi = std::sqrt(std::max(0.0, 1.0 - c_phi * c_phi));
      for (int fi = 0; fi < f_count_; ++fi) {
        const double* fc = &f_cos_[static_cast<size_t>(fi) * N];
        const double* fs = &f_sin_[static_cast<size_t>(fi) * N];
        for (int br = 0; br < 2; ++br) {
          double sin_phi = br == 0 ? -s_phi : s_phi;
          for (int t = 0; t < N; ++t) {
            double xv = a * (fc[t] * c_phi - fs[t] * sin_phi);
            double q = qflip[static_cast<size_t>(t)];
            for (int mu = 0; mu < mu_count_; ++mu) {
              double zv = z_[static_cast<size_t>(mu) * N + t];
              double w = 0.5 * w_a * f_weight_ * mu_weight_;
              double* slot = &out[(static_cast<size_t>(t) * nu + j) * K];
              for (int pass = 0; pass < (q > 0 ? 2 : 1); ++pass) {
                double sv = (pass == 0 ? xv : -xv) + zv;
                double wp = pass == 0 ? w * (1.0 - q) : w * q;
                for (int k = 0; k < K; ++k) {
                  double lo = thr_[static_cast<size_t>(k)], hi = thr_[static_cast<size_t>(k) + 1];
                  double p = zero_sigma
                                 ? step_mass(hi - sv) - step_mass(lo - sv)
                                 : cdf.mass((lo - sv) * inv_sigma_, (hi - sv) * inv_sigma_);
                  slot[k] += wp * p;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

double likelihood_window(const ScenarioModel& s, const ObservationWindow& y,
                         double x0, const QuadratureSpec& quad,
                         BpskLikelihoodMode mode) {
  LikelihoodEvaluator ev(s, quad, mode);
  return ev.eval_x0(y, x0);
}

double likelihood_window(const ScenarioModel& s, const ObservationWindow& y,
                         double x0, const QuadratureSpec& quad) {
  BpskLikelihoodMode mode =
      (s.desired_kind == DesiredKind::bpsk && s.window <= s.bpsk.tau)
          ? BpskLikelihoodMode::case2
          : BpskLikelihoodMode::case1;
  return likelihood_window(s, y, x0, quad, mode);
}

}  // namespace qlut
