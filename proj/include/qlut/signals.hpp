// Signal generators (tone, square-pulse BPSK, sawtooth LFM chirp, Gaussian
// noise, rectangular dither) plus the prior hyperparameters and the scenario
// description shared by the likelihood, estimator, and LUT layers.
#pragma once

#include <cstdint>
#include <vector>

#include "qlut/quantizer.hpp"
#include "qlut/rng.hpp"

namespace qlut {

struct ToneParams {
  double amplitude = 0.0;
  double frequency = 0.0;  // cycles/sample, in [0, 0.5]
  double phase = 0.0;      // radians
};

struct BpskParams {
  double amplitude = 0.0;
  double frequency = 0.0;
  double phase = 0.0;
  int tau = 1;     // samples per symbol
  int offset = 0;  // symbol-clock offset L in [0, tau)
  // Explicit bit stream; when empty, bits come from a seeded Bernoulli(1/2)
  // process with random access by symbol index.
  std::vector<std::uint8_t> bits;
  std::uint64_t bit_seed = 0;
};

struct LfmParams {
  double amplitude = 0.0;
  double center_frequency = 0.0;  // F_z
  double phase = 0.0;
  double sweep_width = 0.0;         // Omega_z, cycles/sample
  long long repeat_interval = 1;    // Upsilon_z, samples
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool point() const { return lo == hi; }
  double width() const { return hi - lo; }
};

// Prior hyperparameters of the estimator model. Phases are always uniform on
// [0, 2pi); sigma is the Gaussian noise deviation assumed known.
struct PriorSpec {
  Interval amp{0.0, 0.0};
  Interval freq{0.0, 0.0};
  Interval intf_amp{0.0, 0.0};
  Interval intf_freq{0.0, 0.0};
  double sigma = 0.0;
};

enum class DesiredKind { tone, bpsk };
enum class InterfererKind { none, tone, lfm };

struct ScenarioModel {
  DesiredKind desired_kind = DesiredKind::tone;
  ToneParams tone;
  BpskParams bpsk;
  InterfererKind interferer_kind = InterfererKind::none;
  ToneParams intf_tone;
  LfmParams intf_lfm;
  PriorSpec prior;
  Quantizer quantizer = make_uniform_midriser(3);
  int window = 1;  // N

  void validate() const;  // throws std::invalid_argument on bad fields
};

// Symbol bit at index idx (0/1). Explicit streams reject out-of-range access.
int bpsk_bit(const BpskParams& p, long long idx);

std::vector<double> gen_tone(const ToneParams& p, long long n0, long long count);
std::vector<double> gen_bpsk(const BpskParams& p, long long n0, long long count);
std::vector<double> gen_lfm(const LfmParams& p, long long n0, long long count);
std::vector<double> gen_noise_gaussian(double sigma, Rng& rng, long long count);
std::vector<double> gen_dither_rect(double step, Rng& rng, long long count);

// Rectangular density of width a: 1/a on |t| <= a/2, else 0.
double rect_density(double a, double t);

struct AssembledInput {
  std::vector<double> clean;      // desired signal x_n, metric reference
  std::vector<double> composite;  // x_n + z_n + w_n
  std::vector<int> codes;         // quantized composite
};

// Generates count samples starting at n = 0 and quantizes them. Noise and
// metastable draws come from rng in sample order.
AssembledInput assemble_input(const ScenarioModel& s, Rng& rng, long long count);

}  // namespace qlut
