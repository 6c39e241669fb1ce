// Scalar quantizers: uniform mid-riser, INL-perturbed, arbitrary thresholds.
// Codes are integer indices 1..2^b; a separate reconstruction map carries the
// analog levels. Exact hits on an interior threshold resolve to either
// neighbor code with probability 1/2 (metastable comparator rule).
#pragma once

#include <cstdint>
#include <vector>

#include "qlut/rng.hpp"

namespace qlut {

class Quantizer {
 public:
  // thresholds has 2^b + 1 entries, [0] = -inf and [2^b] = +inf, strictly
  // increasing in between; recon has 2^b strictly increasing levels.
  Quantizer(int bits, std::vector<double> thresholds, std::vector<double> recon,
            double step);

  int bits() const { return bits_; }
  int levels() const { return 1 << bits_; }
  double step() const { return step_; }

  // Lower/upper edge of the cell of code k (1-based), sentinels included.
  double lower_edge(int code) const { return thresholds_[code - 1]; }
  double upper_edge(int code) const { return thresholds_[code]; }
  const std::vector<double>& thresholds() const { return thresholds_; }

  double reconstruct(int code) const { return recon_[code - 1]; }
  const std::vector<double>& reconstruction_levels() const { return recon_; }

  // Code of the cell containing x; exact interior-threshold hits pick either
  // neighbor with probability 1/2 from rng.
  int quantize(double x, Rng& rng) const;

  // Adds rectangular dither uniform on [-step/2, step/2], then quantizes.
  int requantize_dithered(double x, Rng& rng) const;

 private:
  int bits_;
  double step_;
  std::vector<double> thresholds_;
  std::vector<double> recon_;
};

// Normalized b-bit mid-riser quantizer: step 2^(1-b), interior thresholds at
// multiples of the step symmetric about 0, reconstruction at cell midpoints.
Quantizer make_uniform_midriser(int bits);

// Shifts each interior threshold by inl[i] * step (one entry per interior
// threshold); reconstruction map is left unchanged. Rejects sequences that
// break threshold monotonicity.
Quantizer apply_inl(const Quantizer& q, const std::vector<double>& inl);

}  // namespace qlut
