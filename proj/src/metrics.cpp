#include "qlut/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>

namespace qlut {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kDbCap = 300.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

// FFTW plan creation is not thread-safe; execution is.
std::mutex g_plan_mutex;

void dft_in_place(std::vector<std::complex<double>>& x, int sign) {
  int n = static_cast<int>(x.size());
  auto* buf = reinterpret_cast<fftw_complex*>(x.data());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    plan = fftw_plan_dft_1d(n, buf, buf, sign, FFTW_ESTIMATE);
  }
  if (plan == nullptr) throw std::runtime_error("dft_in_place: fftw plan failed");
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    fftw_destroy_plan(plan);
  }
}

std::vector<std::complex<double>> dft_real(const std::vector<double>& x) {
  std::vector<std::complex<double>> c(x.begin(), x.end());
  dft_in_place(c, FFTW_FORWARD);
  return c;
}

// Distance between two frequencies on the unit circle of cycles/sample.
double circ_dist(double a, double b) {
  double d = std::fabs(a - b);
  d -= std::floor(d);
  return std::min(d, 1.0 - d);
}

double hann(int i, int n) {
  return 0.5 * (1.0 - std::cos(kTwoPi * i / n));
}

double to_db(double power) {
  return power > 0.0 ? 10.0 * std::log10(power) : -kInf;
}

}  // namespace

double mse_db(const std::vector<double>& ref, const std::vector<double>& test) {
  if (ref.empty() || ref.size() != test.size())
    throw std::invalid_argument("mse_db: sequences must have equal nonzero length");
  double acc = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    double d = test[i] - ref[i];
    acc += d * d;
  }
  return to_db(acc / static_cast<double>(ref.size()));
}

std::vector<double> periodogram(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("periodogram: empty sequence");
  auto spec = dft_real(x);
  std::vector<double> s(x.size());
  for (size_t k = 0; k < x.size(); ++k)
    s[k] = std::norm(spec[k]) / static_cast<double>(x.size());
  return s;
}

double sfdr_dbc(const std::vector<double>& x, double f_tilde, double f_o) {
  if (f_tilde < 0.0 || f_tilde > 0.5)
    throw std::invalid_argument("sfdr_dbc: f_tilde must be in [0, 0.5]");
  if (!(f_o > 0.0)) throw std::invalid_argument("sfdr_dbc: f_o must be positive");
  long long len = static_cast<long long>(x.size());
  if (static_cast<double>(len) < 2.0 / f_o)
    throw std::invalid_argument("sfdr_dbc: sequence shorter than 2 / f_o");
  std::vector<double> s = periodogram(x);

  long long half = len / 2;
  long long peak = std::llround(f_tilde * static_cast<double>(len));
  if (peak > len - peak) peak = len - peak;  // mirror bin, same power
  double peak_power = s[static_cast<size_t>(peak)];

  double spur = -1.0;
  for (long long k = 0; k <= half; ++k) {
    double f = static_cast<double>(k) / static_cast<double>(len);
    if (std::fabs(f - f_tilde) <= f_o) continue;
    spur = std::max(spur, s[static_cast<size_t>(k)]);
  }
  if (spur < 0.0)
    throw std::invalid_argument("sfdr_dbc: excluded band covers the whole axis");
  if (spur == 0.0) return kDbCap;
  return std::min(kDbCap, 10.0 * std::log10(peak_power / spur));
}

Psd welch_psd(const std::vector<double>& x, int segment, int overlap) {
  if (segment < 2) throw std::invalid_argument("welch_psd: segment must be >= 2");
  if (overlap < 0 || overlap >= segment)
    throw std::invalid_argument("welch_psd: overlap must be in [0, segment)");
  if (static_cast<int>(x.size()) < segment)
    throw std::invalid_argument("welch_psd: sequence shorter than one segment");
  int hop = segment - overlap;
  std::vector<double> window(static_cast<size_t>(segment));
  double norm = 0.0;
  for (int i = 0; i < segment; ++i) {
    window[static_cast<size_t>(i)] = hann(i, segment);
    norm += window[static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
  }

  int bins = segment / 2 + 1;
  std::vector<double> acc(static_cast<size_t>(bins), 0.0);
  int frames = 0;
  std::vector<std::complex<double>> seg(static_cast<size_t>(segment));
  for (size_t start = 0; start + static_cast<size_t>(segment) <= x.size();
       start += static_cast<size_t>(hop)) {
    for (int i = 0; i < segment; ++i)
      seg[static_cast<size_t>(i)] =
          x[start + static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
    dft_in_place(seg, FFTW_FORWARD);
    for (int k = 0; k < bins; ++k)
      acc[static_cast<size_t>(k)] += std::norm(seg[static_cast<size_t>(k)]);
    ++frames;
  }

  Psd out;
  out.freq.resize(static_cast<size_t>(bins));
  out.power_db.resize(static_cast<size_t>(bins));
  for (int k = 0; k < bins; ++k) {
    out.freq[static_cast<size_t>(k)] = static_cast<double>(k) / segment;
    out.power_db[static_cast<size_t>(k)] =
        to_db(acc[static_cast<size_t>(k)] / (norm * frames));
  }
  return out;
}

Spectrogram spectrogram(const std::vector<double>& x, int window, int hop) {
  if (window < 2) throw std::invalid_argument("spectrogram: window must be >= 2");
  if (hop < 1) throw std::invalid_argument("spectrogram: hop must be >= 1");
  if (static_cast<int>(x.size()) < window)
    throw std::invalid_argument("spectrogram: sequence shorter than one window");
  std::vector<double> taper(static_cast<size_t>(window));
  double norm = 0.0;
  for (int i = 0; i < window; ++i) {
    taper[static_cast<size_t>(i)] = hann(i, window);
    norm += taper[static_cast<size_t>(i)] * taper[static_cast<size_t>(i)];
  }

  Spectrogram out;
  int bins = window / 2 + 1;
  out.freq.resize(static_cast<size_t>(bins));
  for (int k = 0; k < bins; ++k)
    out.freq[static_cast<size_t>(k)] = static_cast<double>(k) / window;

  std::vector<std::complex<double>> frame(static_cast<size_t>(window));
  for (size_t start = 0; start + static_cast<size_t>(window) <= x.size();
       start += static_cast<size_t>(hop)) {
    for (int i = 0; i < window; ++i)
      frame[static_cast<size_t>(i)] =
          x[start + static_cast<size_t>(i)] * taper[static_cast<size_t>(i)];
    dft_in_place(frame, FFTW_FORWARD);
    out.time.push_back(static_cast<double>(start) + 0.5 * window);
    std::vector<double> row(static_cast<size_t>(bins));
    for (int k = 0; k < bins; ++k)
      row[static_cast<size_t>(k)] = to_db(std::norm(frame[static_cast<size_t>(k)]) / norm);
    out.power_db.push_back(std::move(row));
  }
  return out;
}

std::vector<std::complex<double>> demod_bpsk(const std::vector<double>& x,
                                             double frequency, double phase,
                                             int tau, int first_boundary) {
  if (tau < 1) throw std::invalid_argument("demod_bpsk: tau must be >= 1");
  if (first_boundary < 0 || first_boundary >= tau)
    throw std::invalid_argument("demod_bpsk: first_boundary must be in [0, tau)");
  if (static_cast<int>(x.size()) < tau)
    throw std::invalid_argument("demod_bpsk: sequence shorter than one symbol");
  size_t len = x.size();

  // Mix to baseband; the desired term lands at DC, its image at -2F.
  std::vector<std::complex<double>> v(len);
  for (size_t n = 0; n < len; ++n) {
    double ang = kTwoPi * frequency * static_cast<double>(n) + phase;
    v[n] = 2.0 * x[n] * std::complex<double>(std::cos(ang), -std::sin(ang));
  }

  // Length-tau moving average, sampled where it covers exactly one symbol.
  std::vector<std::complex<double>> prefix(len + 1, 0.0);
  for (size_t n = 0; n < len; ++n) prefix[n + 1] = prefix[n] + v[n];
  std::vector<std::complex<double>> symbols;
  std::vector<size_t> starts;
  for (size_t end = static_cast<size_t>(first_boundary + tau); end <= len;
       end += static_cast<size_t>(tau)) {
    symbols.push_back((prefix[end] - prefix[end - static_cast<size_t>(tau)]) /
                      static_cast<double>(tau));
    starts.push_back(end - static_cast<size_t>(tau));
  }

  // Within one symbol the image term is the symbol itself times a known
  // rotation, so each average equals symbol * (1 + g_k) with
  // g_k = exp(-j(4 pi F start_k + 2 phase)) * d and d the window mean of
  // exp(-j 4 pi F n). Dividing cancels the image exactly; skip when the
  // image sits on top of baseband (|d| large) and the two are inseparable.
  std::complex<double> den =
      std::polar(1.0, -2.0 * kTwoPi * frequency) - 1.0;
  if (std::abs(den) > 1e-9) {
    std::complex<double> num =
        std::polar(1.0, -2.0 * kTwoPi * frequency * tau) - 1.0;
    std::complex<double> d = num / den / static_cast<double>(tau);
    if (std::abs(d) < 0.5) {
      for (size_t k = 0; k < symbols.size(); ++k) {
        double ang = 2.0 * kTwoPi * frequency * static_cast<double>(starts[k]) +
                     2.0 * phase;
        symbols[k] /= 1.0 + std::polar(1.0, -ang) * d;
      }
    }
  }

  return symbols;
}

EvmResult evm_db(const std::vector<std::complex<double>>& est,
                 const std::vector<std::complex<double>>& ref) {
  if (est.empty() || est.size() != ref.size())
    throw std::invalid_argument("evm_db: sequences must have equal nonzero length");
  double ref_power = 0.0;
  for (const auto& s : ref) ref_power += std::norm(s);
  if (ref_power == 0.0)
    throw std::invalid_argument("evm_db: reference power is zero");
  double mean_ref = ref_power / static_cast<double>(ref.size());

  EvmResult out;
  out.per_symbol_db.resize(est.size());
  double err_total = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    double e = std::norm(est[i] - ref[i]);
    err_total += e;
    out.per_symbol_db[i] = to_db(e / mean_ref);
  }
  out.rms_db = to_db(err_total / ref_power);
  return out;
}

namespace {

// Band-pass around the nominal carrier (analytic: positive band only), mix
// to baseband, square, transform. Returns the squared-signal spectrum.
std::vector<std::complex<double>> squared_spectrum(const std::vector<double>& x,
                                                   double frequency, int tau,
                                                   double bpf_width) {
  if (tau < 1) throw std::invalid_argument("cfo: tau must be >= 1");
  if (frequency <= 0.0 || frequency >= 0.5)
    throw std::invalid_argument("cfo: carrier frequency must be in (0, 0.5)");
  if (static_cast<long long>(x.size()) < 4LL * tau)
    throw std::invalid_argument("cfo: sequence shorter than 4 tau");
  if (bpf_width <= 0.0) bpf_width = 4.0 / tau;
  size_t len = x.size();

  auto spec = dft_real(x);
  for (size_t k = 0; k < len; ++k) {
    double f = static_cast<double>(k) / static_cast<double>(len);
    if (circ_dist(f, frequency) > 0.5 * bpf_width) spec[k] = 0.0;
  }
  dft_in_place(spec, FFTW_BACKWARD);
  std::vector<std::complex<double>> s2(len);
  for (size_t n = 0; n < len; ++n) {
    double ang = kTwoPi * frequency * static_cast<double>(n);
    std::complex<double> bb =
        spec[n] / static_cast<double>(len) *
        std::complex<double>(std::cos(ang), -std::sin(ang));
    s2[n] = bb * bb;
  }
  dft_in_place(s2, FFTW_FORWARD);
  return s2;
}

double bin_to_signed_freq(size_t k, size_t len) {
  double f = static_cast<double>(k) / static_cast<double>(len);
  return f > 0.5 ? f - 1.0 : f;
}

}  // namespace

double cfo_estimate(const std::vector<double>& x, double frequency, int tau,
                    double bpf_width) {
  auto s2 = squared_spectrum(x, frequency, tau, bpf_width);
  size_t best = 0;
  double best_mag = -1.0;
  for (size_t k = 0; k < s2.size(); ++k) {
    double m = std::abs(s2[k]);
    if (m > best_mag) {
      best_mag = m;
      best = k;
    }
  }
  return 0.5 * bin_to_signed_freq(best, s2.size());
}

double cfo_ratio_db(const std::vector<double>& x, double frequency, int tau,
                    double bpf_width) {
  auto s2 = squared_spectrum(x, frequency, tau, bpf_width);
  double nominal = std::abs(s2[0]);  // zero residual offset after mixing
  double other = 0.0;
  for (size_t k = 1; k < s2.size(); ++k) other = std::max(other, std::abs(s2[k]));
  if (other == 0.0) return kDbCap;
  return std::min(kDbCap, 10.0 * std::log10(nominal / other));
}

}  // namespace qlut
