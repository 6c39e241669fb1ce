// Configuration-driven scenario runner: parses expression-valued JSON
// configs, assembles the input stream, quantizes it, builds or loads the
// correction table, runs the correction pipeline, computes per-stage
// metrics, sweeps parameter axes, and serializes machine-readable reports.
#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "qlut/estimators.hpp"
#include "qlut/lut.hpp"
#include "qlut/metrics.hpp"
#include "qlut/signals.hpp"

namespace qlut {

enum class SweepAxis {
  none,
  window,
  sigma,
  frequency,
  amplitude,
  sir,
  tau,
  training_bandwidth,
};

// Axis names as they appear in configs: none, N, sigma, F, A, SIR, tau,
// training-bandwidth.
const char* to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& name);

struct MetricsOptions {
  double sfdr_offset = 0.005;   // excluded band half-width around the carrier
  int psd_segment = 4096;       // clamped to the stream length
  int psd_overlap = -1;         // negative: half the clamped segment
  bool spectrogram = false;     // defaults on for chirp interferers
  int spectrogram_window = 256;
  int spectrogram_hop = 64;
};

// A parsed scenario configuration. Numeric config fields accept plain JSON
// numbers or arithmetic expression strings ("5/16 - pi/1000").
struct RunConfig {
  std::string scenario;  // tone | bpsk | tone+tone | bpsk+tone | bpsk+lfm
  ScenarioModel model;
  long long samples = 100000;
  std::vector<EstimatorConfig> estimators;
  LutMode lut_mode = LutMode::memoized;
  bool dither = true;
  std::string lut_file;  // load when present, build and save when absent
  std::vector<double> test_frequencies;  // empty: probe at the model carrier
  SweepAxis axis = SweepAxis::none;
  std::vector<double> sweep_values;
  std::uint64_t seed = 1;
  std::string out_dir;
  MetricsOptions metrics;
  nlohmann::json echo;  // original config document, embedded in reports
};

RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::string& path);

// Stage name of an estimator config: the kind, plus a window-model suffix
// ("_tone" / "_exact") when the config forces one.
std::string stage_name(const EstimatorConfig& cfg);

struct StageReport {
  std::string name;
  MetricsReport metrics;
  long long fallback_samples = 0;  // corrected samples served by the fallback
};

struct PointReport {
  double frequency = 0.0;  // carrier actually probed
  std::vector<StageReport> stages;
  std::string error;  // empty on success; stages may be partial otherwise
};

struct SweepRow {
  double value = 0.0;
  std::vector<PointReport> points;
  std::string error;
};

struct RunReport {
  nlohmann::json config_echo;
  std::uint64_t seed = 0;
  std::string sweep_axis = "none";
  std::vector<PointReport> points;  // plain runs
  std::vector<SweepRow> rows;       // sweeps
};

// Applies one sweep-axis value to a copy of the base model. A degenerate
// (point) prior follows its true parameter; an interval prior stays put so
// one cached table keeps serving every point. The SIR axis fixes the
// desired amplitude and solves for the interferer amplitude.
ScenarioModel apply_axis(const RunConfig& cfg, SweepAxis axis, double value);

// Thread-safe cache of correction tables keyed by scenario hash, shared
// across sweep points so equal-model points build once.
class LutCache {
 public:
  std::shared_ptr<Lut> get_or_build(const ScenarioModel& s,
                                    const EstimatorConfig& cfg, LutMode mode,
                                    int workers);
  void put(Lut lut);

 private:
  std::mutex mu_;
  std::unordered_map<std::uint64_t, std::shared_ptr<Lut>> map_;
};

// Runs the scenario once (sweep axis must be none): assembles the input,
// quantizes, corrects through each configured estimator, and fills one
// PointReport per probe frequency. Per-point failures are recorded in the
// point's error field. workers parallelizes the table build.
RunReport run_scenario(const RunConfig& cfg, int workers = 1);

// Runs the scenario once per sweep value, sharing the signal seed across
// points so curves differ only through the swept parameter. Rows run
// concurrently up to workers; failures are recorded per row or per point.
RunReport sweep_scenario(const RunConfig& cfg, int workers = 1);

// Canonical JSON serialization. Negative-infinite dB values (an exact
// match) serialize as null; emit(parse(emit(r))) == emit(r) byte for byte,
// and equal-seed runs emit identical bytes.
std::string emit_report(const RunReport& r);
RunReport parse_report(const std::string& text);

// Writes report.json plus plot-ready delimiter-separated tables: per-point
// PSD and EVM traces with one column per stage, per-stage spectrograms, and
// a long-format summary table (points.csv for plain runs, sweep.csv for
// sweeps). Filesystem failures throw.
void emit_outputs(const RunReport& r, const std::string& dir);

}  // namespace qlut
