// Signal-quality metrics over real sample streams: MSE, spurious-free
// dynamic range from the full-length periodogram, Welch PSDs, short-time
// spectrograms, a BPSK baseband demodulator with error-vector magnitude,
// and a squaring carrier-frequency-offset detector. Unbounded dB values are
// reported as IEEE infinities, never as crashes.
#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

namespace qlut {

// 10 log10 of the mean squared difference; -inf for identical sequences.
double mse_db(const std::vector<double>& ref, const std::vector<double>& test);

// Full-length rectangular-window periodogram: S_k = |X_k|^2 / L for DFT bin
// k = 0 .. L-1 (frequency k/L cycles/sample, two-sided). The mean of the
// returned values equals the mean square of the input (Parseval).
std::vector<double> periodogram(const std::vector<double>& x);

// Ratio in dB between the periodogram power at the bin nearest f_tilde and
// the largest power at any bin outside [f_tilde - f_o, f_tilde + f_o],
// searched over the one-sided axis [0, 0.5]. Spur-free inputs are capped at
// +300 dBc. Requires length >= 2 / f_o; throws if the excluded band leaves
// no bins to search.
double sfdr_dbc(const std::vector<double>& x, double f_tilde, double f_o);

struct Psd {
  std::vector<double> freq;      // [0, 0.5], one bin per entry
  std::vector<double> power_db;  // 10 log10 of the averaged power
};

// Welch-averaged PSD: Hann-windowed segments, overlap in samples (half the
// segment is the usual choice). Scaled so white noise of variance v reads
// 10 log10(v) in every bin.
Psd welch_psd(const std::vector<double>& x, int segment, int overlap);

struct Spectrogram {
  std::vector<double> time;  // center sample index of each frame
  std::vector<double> freq;  // [0, 0.5]
  std::vector<std::vector<double>> power_db;  // [frame][bin]
};

Spectrogram spectrogram(const std::vector<double>& x, int window, int hop);

// Recovers BPSK symbols: mixes by the carrier (frequency cycles/sample,
// phase radians), applies a length-tau moving average sampled where it
// covers exactly one symbol, then cancels the double-frequency image term
// in closed form (within one symbol the image is the symbol itself times a
// known rotation, so the correction is exact for a clean signal; it is
// skipped when carrier and image overlap spectrally and cannot be
// separated). first_boundary is the sample index of the first symbol
// boundary (genie timing, 0 <= first_boundary < tau). Symbols keep the
// carrier's amplitude scale, so gain error shows up in downstream metrics.
std::vector<std::complex<double>> demod_bpsk(const std::vector<double>& x,
                                             double frequency, double phase,
                                             int tau, int first_boundary);

struct EvmResult {
  std::vector<double> per_symbol_db;
  double rms_db = 0.0;
};

// Error vector magnitude against reference symbols: per-symbol values are
// relative to the mean reference power, the RMS aggregate to the total
// reference power. Exact matches report -inf.
EvmResult evm_db(const std::vector<std::complex<double>>& est,
                 const std::vector<std::complex<double>>& ref);

// Squaring CFO detector: brick-wall band-pass of width bpf_width around the
// nominal carrier (4/tau when bpf_width <= 0), analytic baseband mixing,
// squaring, and a DFT magnitude search. The squared spectrum is searched
// two-sided, so the half-argmax residual lands in (-0.25, 0.25].
// cfo_ratio_db compares the magnitude at the nominal (zero-offset) bin with
// the largest other bin; a spur-free spectrum caps at +300 dB. Both require
// length >= 4 tau.
double cfo_estimate(const std::vector<double>& x, double frequency, int tau,
                    double bpf_width = 0.0);
double cfo_ratio_db(const std::vector<double>& x, double frequency, int tau,
                    double bpf_width = 0.0);

// One stage's metric bundle; absent members were not evaluated for the
// stage. Assembled by the scenario runner.
struct MetricsReport {
  std::optional<double> mse_db;
  std::optional<double> sfdr_dbc;
  std::vector<double> evm_per_symbol_db;
  std::optional<double> evm_rms_db;
  std::optional<double> cfo_estimate;
  std::optional<double> cfo_ratio_db;
  std::optional<Psd> psd;
  std::optional<Spectrogram> spectrogram;
  int warmup_discarded = 0;
  std::uint64_t seed = 0;
};

}  // namespace qlut
