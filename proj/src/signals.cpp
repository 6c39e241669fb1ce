#include "qlut/signals.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace qlut {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

long long floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

long long euclid_mod(long long a, long long b) {
  long long m = a % b;
  if (m < 0) m += b;
  return m;
}

}  // namespace

void ScenarioModel::validate() const {
  auto check_freq = [](double f, const char* what) {
    if (!(f >= 0.0 && f <= 0.5))
      throw std::invalid_argument(std::string("ScenarioModel: ") + what +
                                  " outside [0, 0.5]");
  };
  if (window < 0) throw std::invalid_argument("ScenarioModel: window must be >= 0");
  if (desired_kind == DesiredKind::tone) {
    if (tone.amplitude < 0)
      throw std::invalid_argument("ScenarioModel: tone amplitude must be >= 0");
    check_freq(tone.frequency, "tone frequency");
  } else {
    if (bpsk.amplitude < 0)
      throw std::invalid_argument("ScenarioModel: bpsk amplitude must be >= 0");
    check_freq(bpsk.frequency, "bpsk frequency");
    if (bpsk.tau < 1) throw std::invalid_argument("ScenarioModel: bpsk tau must be >= 1");
    if (bpsk.offset < 0 || bpsk.offset >= bpsk.tau)
      throw std::invalid_argument("ScenarioModel: bpsk offset must lie in [0, tau)");
  }
  if (interferer_kind == InterfererKind::tone) {
    check_freq(intf_tone.frequency, "interferer frequency");
  } else if (interferer_kind == InterfererKind::lfm) {
    if (intf_lfm.repeat_interval < 1)
      throw std::invalid_argument("ScenarioModel: lfm repeat interval must be >= 1");
    check_freq(intf_lfm.center_frequency - intf_lfm.sweep_width / 2, "lfm band low edge");
    check_freq(intf_lfm.center_frequency + intf_lfm.sweep_width / 2, "lfm band high edge");
  }
  if (prior.amp.lo > prior.amp.hi || prior.freq.lo > prior.freq.hi ||
      prior.intf_amp.lo > prior.intf_amp.hi || prior.intf_freq.lo > prior.intf_freq.hi)
    throw std::invalid_argument("ScenarioModel: prior interval lower bound exceeds upper");
  check_freq(prior.freq.lo, "prior freq low");
  check_freq(prior.freq.hi, "prior freq high");
  if (prior.sigma < 0) throw std::invalid_argument("ScenarioModel: sigma must be >= 0");
}

int bpsk_bit(const BpskParams& p, long long idx) {
  if (!p.bits.empty()) {
    if (idx < 0 || idx >= static_cast<long long>(p.bits.size()))
      throw std::invalid_argument("gen_bpsk: bit stream exhausted at symbol index " +
                                  std::to_string(idx));
    return p.bits[static_cast<size_t>(idx)] & 1;
  }
  return static_cast<int>(child_seed(p.bit_seed, static_cast<std::uint64_t>(idx)) & 1ULL);
}

std::vector<double> gen_tone(const ToneParams& p, long long n0, long long count) {
  if (count < 0) throw std::invalid_argument("gen_tone: count must be >= 0");
  std::vector<double> out(static_cast<size_t>(count));
  for (long long i = 0; i < count; ++i) {
    double n = static_cast<double>(n0 + i);
    out[static_cast<size_t>(i)] = p.amplitude * std::cos(kTwoPi * p.frequency * n + p.phase);
  }
  return out;
}

std::vector<double> gen_bpsk(const BpskParams& p, long long n0, long long count) {
  if (count < 0) throw std::invalid_argument("gen_bpsk: count must be >= 0");
  std::vector<double> out(static_cast<size_t>(count));
  int r0 = bpsk_bit(p, 0);
  for (long long i = 0; i < count; ++i) {
    long long n = n0 + i;
    long long sym = floor_div(n + p.offset, p.tau);
    int flip = (bpsk_bit(p, sym) - r0) & 1;
    double theta = p.phase + M_PI * flip;
    out[static_cast<size_t>(i)] =
        p.amplitude * std::cos(kTwoPi * p.frequency * static_cast<double>(n) + theta);
  }
  return out;
}

std::vector<double> gen_lfm(const LfmParams& p, long long n0, long long count) {
  if (count < 0) throw std::invalid_argument("gen_lfm: count must be >= 0");
  std::vector<double> out(static_cast<size_t>(count));
  double f_lo = p.center_frequency - p.sweep_width / 2.0;
  double slope = p.sweep_width / static_cast<double>(p.repeat_interval);
  for (long long i = 0; i < count; ++i) {
    long long n = n0 + i;
    double fn = f_lo + slope * static_cast<double>(euclid_mod(n, p.repeat_interval));
    out[static_cast<size_t>(i)] =
        p.amplitude * std::cos(kTwoPi * fn * static_cast<double>(n) + p.phase);
  }
  return out;
}

std::vector<double> gen_noise_gaussian(double sigma, Rng& rng, long long count) {
  if (sigma < 0) throw std::invalid_argument("gen_noise_gaussian: sigma must be >= 0");
  if (count < 0) throw std::invalid_argument("gen_noise_gaussian: count must be >= 0");
  std::vector<double> out(static_cast<size_t>(count));
  for (auto& v : out) v = sigma == 0.0 ? 0.0 : sigma * rng.gauss();
  return out;
}

std::vector<double> gen_dither_rect(double step, Rng& rng, long long count) {
  if (step <= 0) throw std::invalid_argument("gen_dither_rect: step must be > 0");
  if (count < 0) throw std::invalid_argument("gen_dither_rect: count must be >= 0");
  std::vector<double> out(static_cast<size_t>(count));
  for (auto& v : out) v = rng.uniform(-step / 2.0, step / 2.0);
  return out;
}

double rect_density(double a, double t) {
  if (a <= 0) throw std::invalid_argument("rect_density: width must be > 0");
  return std::abs(t) <= a / 2.0 ? 1.0 / a : 0.0;
}

AssembledInput assemble_input(const ScenarioModel& s, Rng& rng, long long count) {
  s.validate();
  AssembledInput out;
  out.clean = s.desired_kind == DesiredKind::tone ? gen_tone(s.tone, 0, count)
                                                  : gen_bpsk(s.bpsk, 0, count);
  out.composite = out.clean;
  if (s.interferer_kind == InterfererKind::tone) {
    std::vector<double> z = gen_tone(s.intf_tone, 0, count);
    for (size_t i = 0; i < out.composite.size(); ++i) out.composite[i] += z[i];
  } else if (s.interferer_kind == InterfererKind::lfm) {
    std::vector<double> z = gen_lfm(s.intf_lfm, 0, count);
    for (size_t i = 0; i < out.composite.size(); ++i) out.composite[i] += z[i];
  }
  out.codes.resize(static_cast<size_t>(count));
  for (size_t i = 0; i < out.composite.size(); ++i) {
    double w = s.prior.sigma == 0.0 ? 0.0 : s.prior.sigma * rng.gauss();
    out.composite[i] += w;
    out.codes[i] = s.quantizer.quantize(out.composite[i], rng);
  }
  return out;
}

}  // namespace qlut
