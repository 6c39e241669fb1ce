// Correction look-up tables: code-window packing, estimate tables built from
// a window estimator (full enumeration up front or filled per observed
// window), the streaming correction pipeline (estimate, optional dither,
// requantize), and a binary file format for reusing expensive tables.
#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "qlut/estimators.hpp"
#include "qlut/likelihood.hpp"
#include "qlut/quantizer.hpp"
#include "qlut/rng.hpp"
#include "qlut/signals.hpp"

namespace qlut {

// Packs an N-code window (oldest first, codes 1 .. 2^b) into a radix-2^b
// integer; the oldest code occupies the least significant b bits, so the
// all-ones window maps to 0. Rejects out-of-range codes and windows whose
// packed form would not fit the 63 usable index bits.
std::uint64_t window_index(const ObservationWindow& y, int bits);
ObservationWindow window_unpack(std::uint64_t index, int bits, int window);

// Hash over everything the estimator consumes: quantizer geometry, window
// length, noise level, the priors, desired/interferer kinds, the symbol
// interval, quadrature resolution, the window model, and the estimator kind.
// Parameters that only drive test-waveform synthesis (deterministic tone,
// BPSK bit stream and clock offset, interferer realization) are excluded, so
// one table serves any probe signal drawn from the same model.
std::uint64_t scenario_hash(const ScenarioModel& s, const EstimatorConfig& cfg);

enum class LutMode { materialized, memoized };

const char* to_string(LutMode m);
LutMode lut_mode_from_string(const std::string& name);

struct LutEntry {
  double value = 0.0;
  bool fallback = false;
};

// Estimate table for one scenario/estimator pair. The materialized mode
// computes every addressable window up front (requires bits * window <= 24)
// and is immutable afterwards; the memoized mode starts empty and computes
// entries on first access, guarded by a mutex so concurrent lookups are
// safe. Both modes return identical values for identical windows.
class Lut {
 public:
  Lut(const ScenarioModel& s, const EstimatorConfig& cfg, LutMode mode,
      int workers = 1);

  LutEntry at(const ObservationWindow& y);
  LutEntry at_index(std::uint64_t index);

  LutMode mode() const { return mode_; }
  int bits() const { return bits_; }
  int window() const { return window_; }
  EstimatorKind kind() const { return cfg_.kind; }
  std::uint64_t hash() const { return hash_; }
  std::uint64_t capacity() const { return capacity_; }

  // Entries currently stored (always capacity() for materialized tables)
  // and how many of them carry the fallback flag.
  std::size_t size() const;
  std::size_t fallback_count() const;

  // Stored entries as (index, entry) pairs sorted by index.
  std::vector<std::pair<std::uint64_t, LutEntry>> entries() const;

  const WindowEstimator& estimator() const { return est_; }

  // Binary table file; layout documented next to the implementation and in
  // the project README.
  void save(const std::string& path) const;

  // Reloads a saved table. The scenario and config must reproduce the
  // stored hash, geometry and estimator kind, so a stale or foreign file
  // fails loudly instead of silently serving wrong estimates.
  static Lut load(const std::string& path, const ScenarioModel& s,
                  const EstimatorConfig& cfg);

 private:
  Lut(const ScenarioModel& s, const EstimatorConfig& cfg, LutMode mode,
      int workers, bool build);

  LutEntry compute(std::uint64_t index) const;

  LutMode mode_;
  int bits_ = 0;
  int window_ = 0;
  std::uint64_t capacity_ = 0;
  std::uint64_t hash_ = 0;
  EstimatorConfig cfg_;
  WindowEstimator est_;
  std::vector<double> values_;        // materialized estimates
  std::vector<std::uint8_t> flags_;   // materialized fallback flags
  std::unordered_map<std::uint64_t, LutEntry> map_;  // memoized entries
  // Heap-held so the table stays movable (into optionals and out of load).
  mutable std::unique_ptr<std::mutex> mu_;
};

// Streaming correction: each output replaces the newest sample of the
// trailing code window with the table estimate. The first window-1 samples
// (not enough history yet) emit the midpoint reconstruction of the current
// code, as does a pipeline without a table (window 0 reference mode). The
// requantizer must match the table's code resolution.
struct CorrectionPipeline {
  std::optional<Lut> lut;
  Quantizer requantizer;
  bool dither = true;
  std::uint64_t seed = 0;
};

// Builds the pipeline for a scenario: a table of the scenario's window
// length (none when the window is 0) plus an ideal uniform requantizer at
// the source quantizer's bit depth.
CorrectionPipeline make_pipeline(const ScenarioModel& s, const EstimatorConfig& cfg,
                                 LutMode mode, bool dither, std::uint64_t seed,
                                 int workers = 1);

struct CorrectedStream {
  std::vector<double> estimates;
  std::vector<int> requantized;
  std::vector<std::uint8_t> fallback;  // 1 where the table fell back
};

// Output stage on its own: optional rectangular dither, then requantize.
// Exposed separately so a reference signal can be pushed through the exact
// output stage the pipeline uses.
std::vector<int> requantize_stream(const Quantizer& q,
                                   const std::vector<double>& estimates,
                                   bool dither, std::uint64_t seed);

// Corrects a whole code stream. Output sample n depends only on codes
// [0 .. n], and a fixed seed makes the run fully reproducible. Memoized
// tables fill as a side effect. Throws if the stream is shorter than the
// table window or contains out-of-range codes.
CorrectedStream correct_stream(CorrectionPipeline& p, const std::vector<int>& codes);

// The same correction driven by a non-owning table pointer (nullptr means
// window 0 reference mode), for callers that share one table across many
// streams.
CorrectedStream correct_stream(Lut* lut, const Quantizer& requantizer,
                               bool dither, std::uint64_t seed,
                               const std::vector<int>& codes);

// Header and entry summary of a saved table file, readable without the
// scenario that built it.
struct LutFileInfo {
  int bits = 0;
  int window = 0;
  EstimatorKind kind = EstimatorKind::mmse;
  LutMode mode = LutMode::materialized;
  std::uint64_t hash = 0;
  std::uint64_t capacity = 0;
  std::uint64_t count = 0;
  std::uint64_t fallbacks = 0;
};

LutFileInfo lut_file_info(const std::string& path);

}  // namespace qlut
