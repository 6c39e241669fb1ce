#include "qlut/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace qlut {

Quantizer::Quantizer(int bits, std::vector<double> thresholds,
                     std::vector<double> recon, double step)
    : bits_(bits), step_(step), thresholds_(std::move(thresholds)),
      recon_(std::move(recon)) {
  if (bits_ < 1) throw std::invalid_argument("Quantizer: bits must be >= 1");
  size_t n = size_t(1) << bits_;
  if (thresholds_.size() != n + 1)
    throw std::invalid_argument("Quantizer: thresholds must have 2^b + 1 entries");
  if (recon_.size() != n)
    throw std::invalid_argument("Quantizer: reconstruction map must have 2^b entries");
  if (!std::isinf(thresholds_.front()) || thresholds_.front() > 0)
    throw std::invalid_argument("Quantizer: thresholds[0] must be -inf");
  if (!std::isinf(thresholds_.back()) || thresholds_.back() < 0)
    throw std::invalid_argument("Quantizer: thresholds[2^b] must be +inf");
  for (size_t i = 1; i + 2 < thresholds_.size(); ++i) {
    if (!(thresholds_[i] < thresholds_[i + 1]))
      throw std::invalid_argument(
          "Quantizer: thresholds not strictly increasing between indices " +
          std::to_string(i) + " and " + std::to_string(i + 1));
  }
  for (size_t i = 0; i + 1 < recon_.size(); ++i) {
    if (!(recon_[i] < recon_[i + 1]))
      throw std::invalid_argument("Quantizer: reconstruction map not strictly increasing");
  }
}

int Quantizer::quantize(double x, Rng& rng) const {
  if (!std::isfinite(x))
    throw std::invalid_argument("quantize: input must be finite");
  // Interior thresholds are thresholds_[1 .. 2^b-1].
  auto begin = thresholds_.begin() + 1;
  auto end = thresholds_.end() - 1;
  auto it = std::lower_bound(begin, end, x);
  if (it != end && *it == x) {
    // Metastable comparator: exact hit resolves to either neighbor cell.
    int k = static_cast<int>(it - thresholds_.begin());  // cell below is k
    return rng.bernoulli() ? k + 1 : k;
  }
  return static_cast<int>(it - thresholds_.begin());  // upper_bound == lower_bound here
}

int Quantizer::requantize_dithered(double x, Rng& rng) const {
  double v = rng.uniform(-step_ / 2.0, step_ / 2.0);
  return quantize(x + v, rng);
}

Quantizer make_uniform_midriser(int bits) {
  if (bits < 1) throw std::invalid_argument("make_uniform_midriser: bits must be >= 1");
  if (bits > 24) throw std::invalid_argument("make_uniform_midriser: bits too large");
  int n = 1 << bits;
  double step = std::ldexp(1.0, 1 - bits);
  std::vector<double> thr(n + 1);
  thr[0] = -std::numeric_limits<double>::infinity();
  thr[n] = std::numeric_limits<double>::infinity();
  for (int j = 1; j < n; ++j) thr[j] = j * step - 1.0;
  std::vector<double> recon(n);
  for (int k = 1; k <= n; ++k) recon[k - 1] = (k - 0.5) * step - 1.0;
  return Quantizer(bits, std::move(thr), std::move(recon), step);
}

Quantizer apply_inl(const Quantizer& q, const std::vector<double>& inl) {
  size_t interior = (size_t(1) << q.bits()) - 1;
  if (inl.size() != interior)
    throw std::invalid_argument("apply_inl: inl must have 2^b - 1 entries, got " +
                                std::to_string(inl.size()));
  std::vector<double> thr = q.thresholds();
  for (size_t i = 0; i < interior; ++i) thr[i + 1] += inl[i] * q.step();
  for (size_t i = 1; i + 1 < thr.size() - 1; ++i) {
    if (!(thr[i] < thr[i + 1]))
      throw std::invalid_argument(
          "apply_inl: shifted thresholds non-monotone between interior indices " +
          std::to_string(i) + " and " + std::to_string(i + 1));
  }
  return Quantizer(q.bits(), std::move(thr), q.reconstruction_levels(), q.step());
}

}  // namespace qlut
