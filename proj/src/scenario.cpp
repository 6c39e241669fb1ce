#include "qlut/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

#include "qlut/expr.hpp"
#include "qlut/likelihood.hpp"
#include "qlut/rng.hpp"

namespace qlut {
namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kSignalStream = 1;
constexpr std::uint64_t kDitherStream = 2;

[[noreturn]] void fail(const std::string& where, const std::string& msg) {
  throw std::invalid_argument(where + ": " + msg);
}

// Numeric config fields are plain numbers or expression strings.
double as_number(const json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    try {
      return eval_expr(j.get<std::string>());
    } catch (const std::invalid_argument& e) {
      fail(where, e.what());
    }
  }
  fail(where, "expected a number or an expression string");
}

double num_field(const json& obj, const char* key, const std::string& where,
                 double fallback) {
  if (!obj.contains(key)) return fallback;
  return as_number(obj.at(key), where + "." + key);
}

double num_required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) fail(where, std::string("missing field '") + key + "'");
  return as_number(obj.at(key), where + "." + key);
}

long long int_cast(double v, const std::string& where) {
  if (!std::isfinite(v) || v != std::floor(v))
    fail(where, "expected an integer");
  return static_cast<long long>(v);
}

long long int_field(const json& obj, const char* key, const std::string& where,
                    long long fallback) {
  if (!obj.contains(key)) return fallback;
  return int_cast(as_number(obj.at(key), where + "." + key), where + "." + key);
}

std::string str_field(const json& obj, const char* key, const std::string& where,
                      const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& j = obj.at(key);
  if (!j.is_string()) fail(where + "." + key, "expected a string");
  return j.get<std::string>();
}

bool bool_field(const json& obj, const char* key, const std::string& where,
                bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& j = obj.at(key);
  if (!j.is_boolean()) fail(where + "." + key, "expected true or false");
  return j.get<bool>();
}

// A scalar makes a point interval; [lo, hi] an interval.
Interval interval_field(const json& obj, const char* key, const std::string& where,
                        Interval fallback) {
  if (!obj.contains(key)) return fallback;
  const json& j = obj.at(key);
  std::string at = where + "." + key;
  if (j.is_array()) {
    if (j.size() != 2) fail(at, "expected [lo, hi]");
    Interval iv{as_number(j[0], at), as_number(j[1], at)};
    if (iv.lo > iv.hi) fail(at, "interval is reversed");
    return iv;
  }
  double v = as_number(j, at);
  return {v, v};
}

void check_object(const json& j, const std::string& where) {
  if (!j.is_object()) fail(where, "expected an object");
}

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) known = true;
    if (!known) fail(where, "unknown field '" + item.key() + "'");
  }
}

QuadratureSpec parse_quad(const json& obj, const std::string& where) {
  QuadratureSpec q;
  if (!obj.contains("quad")) return q;
  const json& j = obj.at("quad");
  std::string at = where + ".quad";
  check_object(j, at);
  check_keys(j, at, {"x0_nodes", "phase_nodes", "freq_nodes", "amp_nodes",
                     "refine_tol"});
  q.x0_nodes = static_cast<int>(int_field(j, "x0_nodes", at, q.x0_nodes));
  q.phase_nodes = static_cast<int>(int_field(j, "phase_nodes", at, q.phase_nodes));
  q.freq_nodes = static_cast<int>(int_field(j, "freq_nodes", at, q.freq_nodes));
  q.amp_nodes = static_cast<int>(int_field(j, "amp_nodes", at, q.amp_nodes));
  q.refine_tol = num_field(j, "refine_tol", at, q.refine_tol);
  return q;
}

EstimatorConfig parse_estimator(const json& j, const std::string& where) {
  check_object(j, where);
  check_keys(j, where, {"kind", "bpsk_mode", "quad"});
  EstimatorConfig cfg;
  std::string kind = str_field(j, "kind", where, "mmse");
  try {
    cfg.kind = estimator_kind_from_string(kind);
  } catch (const std::invalid_argument&) {
    fail(where + ".kind", "unknown estimator '" + kind + "'");
  }
  std::string mode = str_field(j, "bpsk_mode", where, "auto");
  if (mode == "tone") {
    cfg.bpsk_mode = BpskLikelihoodMode::case1;
  } else if (mode == "exact") {
    cfg.bpsk_mode = BpskLikelihoodMode::case2;
  } else if (mode != "auto") {
    fail(where + ".bpsk_mode", "expected auto, tone, or exact");
  }
  cfg.quad = parse_quad(j, where);
  return cfg;
}

struct ScenarioKinds {
  DesiredKind desired;
  InterfererKind interferer;
};

ScenarioKinds scenario_kinds(const std::string& name) {
  if (name == "tone") return {DesiredKind::tone, InterfererKind::none};
  if (name == "bpsk") return {DesiredKind::bpsk, InterfererKind::none};
  if (name == "tone+tone") return {DesiredKind::tone, InterfererKind::tone};
  if (name == "bpsk+tone") return {DesiredKind::bpsk, InterfererKind::tone};
  if (name == "bpsk+lfm") return {DesiredKind::bpsk, InterfererKind::lfm};
  fail("config.scenario",
       "expected tone, bpsk, tone+tone, bpsk+tone, or bpsk+lfm");
}

void require_frequency(double f, const std::string& where) {
  if (!(f >= 0.0 && f <= 0.5)) fail(where, "frequency must be in [0, 0.5]");
}

void validate_sweep_values(const RunConfig& cfg) {
  const std::string at = "config.sweep.values";
  for (double v : cfg.sweep_values) {
    if (!std::isfinite(v)) fail(at, "values must be finite");
    switch (cfg.axis) {
      case SweepAxis::none:
        break;
      case SweepAxis::window:
        if (int_cast(v, at) < 0) fail(at, "N must be >= 0");
        break;
      case SweepAxis::tau:
        if (int_cast(v, at) < 1) fail(at, "tau must be >= 1");
        break;
      case SweepAxis::sigma:
        if (v < 0.0) fail(at, "sigma must be >= 0");
        break;
      case SweepAxis::frequency:
        require_frequency(v, at);
        break;
      case SweepAxis::amplitude:
        if (v <= 0.0) fail(at, "amplitude must be > 0");
        break;
      case SweepAxis::sir:
        break;
      case SweepAxis::training_bandwidth:
        if (v < 0.0) fail(at, "half-width must be >= 0");
        break;
    }
  }
}

}  // namespace

const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::none: return "none";
    case SweepAxis::window: return "N";
    case SweepAxis::sigma: return "sigma";
    case SweepAxis::frequency: return "F";
    case SweepAxis::amplitude: return "A";
    case SweepAxis::sir: return "SIR";
    case SweepAxis::tau: return "tau";
    case SweepAxis::training_bandwidth: return "training-bandwidth";
  }
  return "none";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "none") return SweepAxis::none;
  if (name == "N") return SweepAxis::window;
  if (name == "sigma") return SweepAxis::sigma;
  if (name == "F") return SweepAxis::frequency;
  if (name == "A") return SweepAxis::amplitude;
  if (name == "SIR") return SweepAxis::sir;
  if (name == "tau") return SweepAxis::tau;
  if (name == "training-bandwidth") return SweepAxis::training_bandwidth;
  throw std::invalid_argument("sweep_axis_from_string: unknown axis '" + name +
                              "'");
}

RunConfig parse_config(const json& doc) {
  check_object(doc, "config");
  check_keys(doc, "config",
             {"scenario", "samples", "seed", "out", "quantizer", "sigma",
              "window", "desired", "interferer", "prior", "estimator", "lut",
              "metrics", "test_frequencies", "sweep"});
  RunConfig cfg;
  cfg.echo = doc;

  if (!doc.contains("scenario")) fail("config", "missing field 'scenario'");
  if (!doc.at("scenario").is_string())
    fail("config.scenario", "expected a string");
  cfg.scenario = doc.at("scenario").get<std::string>();
  ScenarioKinds kinds = scenario_kinds(cfg.scenario);
  cfg.model.desired_kind = kinds.desired;
  cfg.model.interferer_kind = kinds.interferer;

  cfg.samples = int_field(doc, "samples", "config", 100000);
  if (cfg.samples < 1000) fail("config.samples", "must be >= 1000");
  if (doc.contains("seed")) {
    const json& j = doc.at("seed");
    if (!j.is_number_integer() && !j.is_number_unsigned())
      fail("config.seed", "expected an integer");
    cfg.seed = j.get<std::uint64_t>();
  }
  cfg.out_dir = str_field(doc, "out", "config", "");

  int bits = 3;
  if (doc.contains("quantizer")) {
    const json& j = doc.at("quantizer");
    check_object(j, "config.quantizer");
    check_keys(j, "config.quantizer", {"bits", "inl"});
    bits = static_cast<int>(int_field(j, "bits", "config.quantizer", 3));
    cfg.model.quantizer = make_uniform_midriser(bits);
    if (j.contains("inl")) {
      const json& a = j.at("inl");
      if (!a.is_array()) fail("config.quantizer.inl", "expected an array");
      std::vector<double> inl;
      for (const json& e : a)
        inl.push_back(as_number(e, "config.quantizer.inl"));
      try {
        cfg.model.quantizer = apply_inl(cfg.model.quantizer, inl);
      } catch (const std::invalid_argument& e) {
        fail("config.quantizer.inl", e.what());
      }
    }
  } else {
    cfg.model.quantizer = make_uniform_midriser(bits);
  }

  cfg.model.prior.sigma = num_required(doc, "sigma", "config");
  cfg.model.window =
      static_cast<int>(int_field(doc, "window", "config", -1));
  if (cfg.model.window < 0)
    fail("config.window", "missing or negative table order");

  if (!doc.contains("desired")) fail("config", "missing field 'desired'");
  const json& des = doc.at("desired");
  check_object(des, "config.desired");
  double carrier = 0.0;
  if (kinds.desired == DesiredKind::tone) {
    check_keys(des, "config.desired", {"amplitude", "frequency", "phase"});
    cfg.model.tone.amplitude = num_required(des, "amplitude", "config.desired");
    cfg.model.tone.frequency = num_required(des, "frequency", "config.desired");
    cfg.model.tone.phase = num_field(des, "phase", "config.desired", 0.0);
    carrier = cfg.model.tone.frequency;
  } else {
    check_keys(des, "config.desired",
               {"amplitude", "frequency", "phase", "tau", "offset", "bit_seed",
                "bits"});
    BpskParams& p = cfg.model.bpsk;
    p.amplitude = num_required(des, "amplitude", "config.desired");
    p.frequency = num_required(des, "frequency", "config.desired");
    p.phase = num_field(des, "phase", "config.desired", 0.0);
    p.tau = static_cast<int>(int_field(des, "tau", "config.desired", 0));
    if (p.tau < 1) fail("config.desired.tau", "must be >= 1");
    p.offset = static_cast<int>(int_field(des, "offset", "config.desired", 0));
    if (des.contains("bit_seed")) {
      const json& j = des.at("bit_seed");
      if (!j.is_number_integer() && !j.is_number_unsigned())
        fail("config.desired.bit_seed", "expected an integer");
      p.bit_seed = j.get<std::uint64_t>();
    }
    if (des.contains("bits")) {
      const json& a = des.at("bits");
      if (!a.is_array()) fail("config.desired.bits", "expected an array");
      for (const json& e : a) {
        long long b = int_cast(as_number(e, "config.desired.bits"),
                               "config.desired.bits");
        if (b != 0 && b != 1) fail("config.desired.bits", "bits must be 0 or 1");
        p.bits.push_back(static_cast<std::uint8_t>(b));
      }
    }
    carrier = p.frequency;
  }

  if (kinds.interferer == InterfererKind::none) {
    if (doc.contains("interferer"))
      fail("config.interferer", "scenario '" + cfg.scenario +
                                    "' takes no interferer");
  } else {
    if (!doc.contains("interferer"))
      fail("config", "missing field 'interferer'");
    const json& intf = doc.at("interferer");
    check_object(intf, "config.interferer");
    if (kinds.interferer == InterfererKind::tone) {
      check_keys(intf, "config.interferer", {"amplitude", "frequency", "phase"});
      cfg.model.intf_tone.amplitude =
          num_required(intf, "amplitude", "config.interferer");
      cfg.model.intf_tone.frequency =
          num_required(intf, "frequency", "config.interferer");
      cfg.model.intf_tone.phase =
          num_field(intf, "phase", "config.interferer", 0.0);
    } else {
      check_keys(intf, "config.interferer",
                 {"amplitude", "center_frequency", "phase", "sweep_width",
                  "repeat_interval"});
      LfmParams& p = cfg.model.intf_lfm;
      p.amplitude = num_required(intf, "amplitude", "config.interferer");
      p.center_frequency =
          num_required(intf, "center_frequency", "config.interferer");
      p.phase = num_field(intf, "phase", "config.interferer", 0.0);
      p.sweep_width = num_required(intf, "sweep_width", "config.interferer");
      p.repeat_interval =
          int_field(intf, "repeat_interval", "config.interferer", 1);
    }
  }

  // Prior defaults: parameters assumed known (degenerate at the truth); a
  // chirp interferer maps to its stationary-phase tone band.
  double amp = kinds.desired == DesiredKind::tone ? cfg.model.tone.amplitude
                                                  : cfg.model.bpsk.amplitude;
  Interval amp_dflt{amp, amp};
  Interval freq_dflt{carrier, carrier};
  Interval intf_amp_dflt{0.0, 0.0};
  Interval intf_freq_dflt{0.0, 0.0};
  if (kinds.interferer == InterfererKind::tone) {
    intf_amp_dflt = {cfg.model.intf_tone.amplitude,
                     cfg.model.intf_tone.amplitude};
    intf_freq_dflt = {cfg.model.intf_tone.frequency,
                      cfg.model.intf_tone.frequency};
  } else if (kinds.interferer == InterfererKind::lfm) {
    LfmPriorFragment frag =
        lfm_effective_prior(cfg.model.intf_lfm, std::max(cfg.model.window, 1));
    intf_amp_dflt = {frag.amplitude, frag.amplitude};
    intf_freq_dflt = frag.freq;
  }
  if (doc.contains("prior")) {
    const json& pr = doc.at("prior");
    check_object(pr, "config.prior");
    check_keys(pr, "config.prior", {"amp", "freq", "intf_amp", "intf_freq"});
    cfg.model.prior.amp = interval_field(pr, "amp", "config.prior", amp_dflt);
    cfg.model.prior.freq = interval_field(pr, "freq", "config.prior", freq_dflt);
    cfg.model.prior.intf_amp =
        interval_field(pr, "intf_amp", "config.prior", intf_amp_dflt);
    cfg.model.prior.intf_freq =
        interval_field(pr, "intf_freq", "config.prior", intf_freq_dflt);
  } else {
    cfg.model.prior.amp = amp_dflt;
    cfg.model.prior.freq = freq_dflt;
    cfg.model.prior.intf_amp = intf_amp_dflt;
    cfg.model.prior.intf_freq = intf_freq_dflt;
  }

  if (doc.contains("estimator")) {
    const json& est = doc.at("estimator");
    if (est.is_array()) {
      if (est.empty()) fail("config.estimator", "empty estimator list");
      for (size_t i = 0; i < est.size(); ++i)
        cfg.estimators.push_back(parse_estimator(
            est[i], "config.estimator[" + std::to_string(i) + "]"));
    } else {
      cfg.estimators.push_back(parse_estimator(est, "config.estimator"));
    }
  } else {
    cfg.estimators.emplace_back();
  }
  for (size_t i = 0; i < cfg.estimators.size(); ++i)
    for (size_t k = 0; k < i; ++k)
      if (stage_name(cfg.estimators[i]) == stage_name(cfg.estimators[k]))
        fail("config.estimator", "duplicate stage '" +
                                     stage_name(cfg.estimators[i]) + "'");

  if (doc.contains("lut")) {
    const json& j = doc.at("lut");
    check_object(j, "config.lut");
    check_keys(j, "config.lut", {"mode", "dither", "file"});
    std::string mode = str_field(j, "mode", "config.lut", "memoized");
    try {
      cfg.lut_mode = lut_mode_from_string(mode);
    } catch (const std::invalid_argument&) {
      fail("config.lut.mode", "expected materialized or memoized");
    }
    cfg.dither = bool_field(j, "dither", "config.lut", true);
    cfg.lut_file = str_field(j, "file", "config.lut", "");
  }

  cfg.metrics.spectrogram = kinds.interferer == InterfererKind::lfm;
  if (doc.contains("metrics")) {
    const json& j = doc.at("metrics");
    check_object(j, "config.metrics");
    check_keys(j, "config.metrics",
               {"sfdr_offset", "psd_segment", "psd_overlap", "spectrogram",
                "spectrogram_window", "spectrogram_hop"});
    MetricsOptions& m = cfg.metrics;
    m.sfdr_offset = num_field(j, "sfdr_offset", "config.metrics", m.sfdr_offset);
    if (m.sfdr_offset <= 0.0)
      fail("config.metrics.sfdr_offset", "must be > 0");
    m.psd_segment = static_cast<int>(
        int_field(j, "psd_segment", "config.metrics", m.psd_segment));
    if (m.psd_segment < 2) fail("config.metrics.psd_segment", "must be >= 2");
    m.psd_overlap = static_cast<int>(
        int_field(j, "psd_overlap", "config.metrics", m.psd_overlap));
    m.spectrogram = bool_field(j, "spectrogram", "config.metrics", m.spectrogram);
    m.spectrogram_window = static_cast<int>(int_field(
        j, "spectrogram_window", "config.metrics", m.spectrogram_window));
    if (m.spectrogram_window < 2)
      fail("config.metrics.spectrogram_window", "must be >= 2");
    m.spectrogram_hop = static_cast<int>(
        int_field(j, "spectrogram_hop", "config.metrics", m.spectrogram_hop));
    if (m.spectrogram_hop < 1)
      fail("config.metrics.spectrogram_hop", "must be >= 1");
  }

  if (doc.contains("test_frequencies")) {
    const json& a = doc.at("test_frequencies");
    if (!a.is_array()) fail("config.test_frequencies", "expected an array");
    for (const json& e : a) {
      double f = as_number(e, "config.test_frequencies");
      require_frequency(f, "config.test_frequencies");
      cfg.test_frequencies.push_back(f);
    }
  }

  if (doc.contains("sweep")) {
    const json& j = doc.at("sweep");
    check_object(j, "config.sweep");
    check_keys(j, "config.sweep", {"axis", "values"});
    std::string axis = str_field(j, "axis", "config.sweep", "none");
    try {
      cfg.axis = sweep_axis_from_string(axis);
    } catch (const std::invalid_argument&) {
      fail("config.sweep.axis", "unknown axis '" + axis + "'");
    }
    if (cfg.axis != SweepAxis::none) {
      if (!j.contains("values") || !j.at("values").is_array() ||
          j.at("values").empty())
        fail("config.sweep.values", "expected a nonempty array");
      for (const json& e : j.at("values"))
        cfg.sweep_values.push_back(as_number(e, "config.sweep.values"));
    }
  }
  if (cfg.axis == SweepAxis::sir &&
      cfg.model.interferer_kind == InterfererKind::none)
    fail("config.sweep.axis", "SIR sweep needs an interferer scenario");
  if (cfg.axis == SweepAxis::tau && cfg.model.desired_kind != DesiredKind::bpsk)
    fail("config.sweep.axis", "tau sweep needs a bpsk scenario");
  validate_sweep_values(cfg);

  try {
    cfg.model.validate();
  } catch (const std::invalid_argument& e) {
    fail("config", e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is)
    throw std::invalid_argument("load_config: cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("load_config: " + path + ": " + e.what());
  }
  return parse_config(doc);
}

std::string stage_name(const EstimatorConfig& cfg) {
  std::string name = to_string(cfg.kind);
  if (cfg.bpsk_mode)
    name += *cfg.bpsk_mode == BpskLikelihoodMode::case2 ? "_exact" : "_tone";
  return name;
}

ScenarioModel apply_axis(const RunConfig& cfg, SweepAxis axis, double value) {
  ScenarioModel s = cfg.model;
  bool tone = s.desired_kind == DesiredKind::tone;
  switch (axis) {
    case SweepAxis::none:
      break;
    case SweepAxis::window:
      s.window = static_cast<int>(value);
      break;
    case SweepAxis::sigma:
      s.prior.sigma = value;
      break;
    case SweepAxis::frequency: {
      (tone ? s.tone.frequency : s.bpsk.frequency) = value;
      if (cfg.model.prior.freq.point()) s.prior.freq = {value, value};
      break;
    }
    case SweepAxis::amplitude: {
      (tone ? s.tone.amplitude : s.bpsk.amplitude) = value;
      if (cfg.model.prior.amp.point()) s.prior.amp = {value, value};
      break;
    }
    case SweepAxis::sir: {
      // SIR in dB of two constant-envelope signals reduces to the amplitude
      // ratio; the desired amplitude stays fixed.
      double a = tone ? s.tone.amplitude : s.bpsk.amplitude;
      double az = a * std::pow(10.0, -value / 20.0);
      if (s.interferer_kind == InterfererKind::tone)
        s.intf_tone.amplitude = az;
      else if (s.interferer_kind == InterfererKind::lfm)
        s.intf_lfm.amplitude = az;
      else
        throw std::invalid_argument("apply_axis: SIR needs an interferer");
      if (cfg.model.prior.intf_amp.point()) s.prior.intf_amp = {az, az};
      break;
    }
    case SweepAxis::tau: {
      if (s.desired_kind != DesiredKind::bpsk)
        throw std::invalid_argument("apply_axis: tau needs a bpsk scenario");
      s.bpsk.tau = static_cast<int>(value);
      s.bpsk.offset %= s.bpsk.tau;
      break;
    }
    case SweepAxis::training_bandwidth: {
      double center = 0.5 * (cfg.model.prior.freq.lo + cfg.model.prior.freq.hi);
      double lo = center - value;
      double hi = center + value;
      if (lo < 0.0 || hi > 0.5)
        throw std::invalid_argument(
            "apply_axis: training band exceeds [0, 0.5]");
      s.prior.freq = {lo, hi};
      break;
    }
  }
  return s;
}

std::shared_ptr<Lut> LutCache::get_or_build(const ScenarioModel& s,
                                            const EstimatorConfig& cfg,
                                            LutMode mode, int workers) {
  std::uint64_t key = scenario_hash(s, cfg);
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it != map_.end()) return it->second;
  }
  // Built outside the lock; a concurrent duplicate build is wasted work,
  // not an error, and the first insert wins.
  auto built = std::make_shared<Lut>(s, cfg, mode, workers);
  std::lock_guard<std::mutex> lock(mu_);
  return map_.emplace(key, std::move(built)).first->second;
}

void LutCache::put(Lut lut) {
  std::uint64_t key = lut.hash();
  auto holder = std::make_shared<Lut>(std::move(lut));
  std::lock_guard<std::mutex> lock(mu_);
  map_.emplace(key, std::move(holder));
}

namespace {

std::vector<double> drop_warmup(std::vector<double> v, int w) {
  if (w > 0) v.erase(v.begin(), v.begin() + w);
  return v;
}

// Metrics of a single already-truncated stage stream. reference is the
// noise-free input, the quantity the estimators recover; the raw stage's
// distance from it is the analog noise floor.
MetricsReport stage_metrics(const std::vector<double>& stream,
                            const std::vector<double>* reference,
                            const ScenarioModel& s, const MetricsOptions& opt,
                            double carrier, int warmup, std::uint64_t seed) {
  MetricsReport m;
  m.warmup_discarded = warmup;
  m.seed = seed;
  if (reference != nullptr) m.mse_db = mse_db(*reference, stream);
  m.sfdr_dbc = sfdr_dbc(stream, carrier, opt.sfdr_offset);

  int len = static_cast<int>(stream.size());
  int segment = std::min(opt.psd_segment, len);
  int overlap = opt.psd_overlap < 0 ? segment / 2
                                    : std::min(opt.psd_overlap, segment - 1);
  m.psd = welch_psd(stream, segment, overlap);

  if (s.desired_kind == DesiredKind::bpsk) {
    const BpskParams& p = s.bpsk;
    // Symbol boundaries in the truncated stream's coordinates.
    long long t0 = warmup;
    long long fb0 = (p.tau - p.offset % p.tau) % p.tau;
    int fb = static_cast<int>(((fb0 - t0) % p.tau + p.tau) % p.tau);
    long long k0 = (t0 + fb + p.offset) / p.tau;
    // The carrier has advanced by warmup samples relative to the truncated
    // stream's time origin.
    double phase = p.phase + 2.0 * std::numbers::pi * carrier *
                                 static_cast<double>(t0);
    auto symbols = demod_bpsk(stream, carrier, phase, p.tau, fb);
    // Absolute constellation reference: gain and rotation errors count. The
    // generator anchors the carrier phase to the first symbol, so flips are
    // relative to bit 0.
    std::vector<std::complex<double>> ref(symbols.size());
    int b0 = bpsk_bit(p, 0);
    for (size_t k = 0; k < ref.size(); ++k) {
      int flip = (bpsk_bit(p, k0 + static_cast<long long>(k)) - b0) & 1;
      ref[k] = p.amplitude * (1.0 - 2.0 * flip);
    }
    EvmResult evm = evm_db(symbols, ref);
    m.evm_per_symbol_db = std::move(evm.per_symbol_db);
    m.evm_rms_db = evm.rms_db;
    m.cfo_estimate = cfo_estimate(stream, carrier, p.tau);
    m.cfo_ratio_db = cfo_ratio_db(stream, carrier, p.tau);
  }

  if (opt.spectrogram) {
    int win = std::min(opt.spectrogram_window, len);
    m.spectrogram = spectrogram(stream, win, opt.spectrogram_hop);
  }
  return m;
}

PointReport eval_point(const RunConfig& cfg, const ScenarioModel& s,
                       std::uint64_t dither_seed, LutCache& cache,
                       int workers) {
  PointReport pt;
  pt.frequency = s.desired_kind == DesiredKind::tone ? s.tone.frequency
                                                     : s.bpsk.frequency;
  s.validate();
  Rng rng(child_seed(cfg.seed, kSignalStream));
  AssembledInput in = assemble_input(s, rng, cfg.samples);
  int w = std::max(0, s.window - 1);

  Quantizer requant = make_uniform_midriser(s.quantizer.bits());
  std::vector<double> clean = drop_warmup(in.clean, w);
  std::vector<double> raw = drop_warmup(in.composite, w);
  std::vector<double> quantized(in.codes.size());
  for (size_t i = 0; i < in.codes.size(); ++i)
    quantized[i] = requant.reconstruct(in.codes[i]);
  quantized = drop_warmup(std::move(quantized), w);

  auto add_stage = [&](const std::string& name, const std::vector<double>& x,
                       bool with_mse, long long fallback) {
    StageReport st;
    st.name = name;
    st.fallback_samples = fallback;
    st.metrics = stage_metrics(x, with_mse ? &clean : nullptr, s, cfg.metrics,
                               pt.frequency, w, dither_seed);
    pt.stages.push_back(std::move(st));
  };

  add_stage("raw", raw, true, 0);
  add_stage("quantized", quantized, true, 0);

  for (const EstimatorConfig& est : cfg.estimators) {
    std::shared_ptr<Lut> lut;
    if (s.window > 0) lut = cache.get_or_build(s, est, cfg.lut_mode, workers);
    CorrectedStream cs =
        correct_stream(lut.get(), requant, cfg.dither, dither_seed, in.codes);
    long long fallback = 0;
    for (size_t i = static_cast<size_t>(w); i < cs.fallback.size(); ++i)
      fallback += cs.fallback[i];
    std::string name = stage_name(est);
    add_stage(name, drop_warmup(std::move(cs.estimates), w), true, fallback);
    std::vector<double> requantized(cs.requantized.size());
    for (size_t i = 0; i < cs.requantized.size(); ++i)
      requantized[i] = requant.reconstruct(cs.requantized[i]);
    add_stage(name + "_requantized", drop_warmup(std::move(requantized), w),
              true, fallback);
  }
  return pt;
}

std::vector<PointReport> eval_points(const RunConfig& cfg,
                                     const ScenarioModel& base,
                                     std::uint64_t row_tag, LutCache& cache,
                                     int workers) {
  std::vector<PointReport> points;
  size_t count = std::max<size_t>(cfg.test_frequencies.size(), 1);
  for (size_t fi = 0; fi < count; ++fi) {
    ScenarioModel s = base;
    if (!cfg.test_frequencies.empty()) {
      double f = cfg.test_frequencies[fi];
      if (s.desired_kind == DesiredKind::tone)
        s.tone.frequency = f;
      else
        s.bpsk.frequency = f;
    }
    std::uint64_t dither_seed =
        child_seed(child_seed(cfg.seed, kDitherStream), (row_tag << 32) | fi);
    PointReport pt;
    try {
      pt = eval_point(cfg, s, dither_seed, cache, workers);
    } catch (const std::exception& e) {
      pt.frequency = s.desired_kind == DesiredKind::tone ? s.tone.frequency
                                                         : s.bpsk.frequency;
      pt.error = e.what();
    }
    points.push_back(std::move(pt));
  }
  return points;
}

}  // namespace

RunReport run_scenario(const RunConfig& cfg, int workers) {
  if (cfg.axis != SweepAxis::none)
    throw std::invalid_argument(
        "run_scenario: config requests a sweep; use sweep_scenario");
  RunReport r;
  r.config_echo = cfg.echo;
  r.seed = cfg.seed;
  r.sweep_axis = "none";

  LutCache cache;
  bool save_table = false;
  if (!cfg.lut_file.empty() && cfg.model.window > 0) {
    if (std::filesystem::exists(cfg.lut_file))
      cache.put(Lut::load(cfg.lut_file, cfg.model, cfg.estimators.front()));
    else
      save_table = true;
  }

  r.points = eval_points(cfg, cfg.model, 0, cache, workers);

  if (save_table) {
    auto lut = cache.get_or_build(cfg.model, cfg.estimators.front(),
                                  cfg.lut_mode, workers);
    lut->save(cfg.lut_file);
  }
  return r;
}

RunReport sweep_scenario(const RunConfig& cfg, int workers) {
  if (cfg.axis == SweepAxis::none)
    throw std::invalid_argument("sweep_scenario: config has no sweep axis");
  RunReport r;
  r.config_echo = cfg.echo;
  r.seed = cfg.seed;
  r.sweep_axis = to_string(cfg.axis);
  r.rows.resize(cfg.sweep_values.size());

  LutCache cache;
  int threads = std::max(
      1, std::min(workers, static_cast<int>(cfg.sweep_values.size())));
  // With row-level parallelism each table builds single-threaded; a lone
  // worker spends its budget inside the build instead.
  int build_workers = threads > 1 ? 1 : workers;

  auto eval_row = [&](size_t i) {
    SweepRow& row = r.rows[i];
    row.value = cfg.sweep_values[i];
    try {
      ScenarioModel base = apply_axis(cfg, cfg.axis, row.value);
      row.points = eval_points(cfg, base, i, cache, build_workers);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };

  if (threads == 1) {
    for (size_t i = 0; i < r.rows.size(); ++i) eval_row(i);
  } else {
    std::atomic<size_t> next{0};
    auto work = [&] {
      for (size_t i = next.fetch_add(1); i < r.rows.size();
           i = next.fetch_add(1))
        eval_row(i);
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads - 1; ++t) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
  }
  return r;
}

namespace {

// JSON cannot carry infinities; the only ones produced are the -inf dB
// markers of exact matches, encoded as null.
json enc_db(double v) {
  if (std::isinf(v)) return json();
  return json(v);
}

double dec_db(const json& j) {
  return j.is_null() ? -kInf : j.get<double>();
}

json enc_db_vec(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(enc_db(x));
  return a;
}

std::vector<double> dec_db_vec(const json& a) {
  std::vector<double> v;
  for (const json& e : a) v.push_back(dec_db(e));
  return v;
}

json metrics_to_json(const MetricsReport& m) {
  json j = json::object();
  if (m.mse_db) j["mse_db"] = enc_db(*m.mse_db);
  if (m.sfdr_dbc) j["sfdr_dbc"] = enc_db(*m.sfdr_dbc);
  if (!m.evm_per_symbol_db.empty())
    j["evm_per_symbol_db"] = enc_db_vec(m.evm_per_symbol_db);
  if (m.evm_rms_db) j["evm_rms_db"] = enc_db(*m.evm_rms_db);
  if (m.cfo_estimate) j["cfo_estimate"] = *m.cfo_estimate;
  if (m.cfo_ratio_db) j["cfo_ratio_db"] = enc_db(*m.cfo_ratio_db);
  if (m.psd)
    j["psd"] = {{"freq", m.psd->freq}, {"power_db", enc_db_vec(m.psd->power_db)}};
  if (m.spectrogram) {
    json rows = json::array();
    for (const auto& frame : m.spectrogram->power_db)
      rows.push_back(enc_db_vec(frame));
    j["spectrogram"] = {{"freq", m.spectrogram->freq},
                        {"power_db", rows},
                        {"time", m.spectrogram->time}};
  }
  j["warmup_discarded"] = m.warmup_discarded;
  j["seed"] = m.seed;
  return j;
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  if (j.contains("mse_db")) m.mse_db = dec_db(j.at("mse_db"));
  if (j.contains("sfdr_dbc")) m.sfdr_dbc = dec_db(j.at("sfdr_dbc"));
  if (j.contains("evm_per_symbol_db"))
    m.evm_per_symbol_db = dec_db_vec(j.at("evm_per_symbol_db"));
  if (j.contains("evm_rms_db")) m.evm_rms_db = dec_db(j.at("evm_rms_db"));
  if (j.contains("cfo_estimate"))
    m.cfo_estimate = j.at("cfo_estimate").get<double>();
  if (j.contains("cfo_ratio_db")) m.cfo_ratio_db = dec_db(j.at("cfo_ratio_db"));
  if (j.contains("psd")) {
    Psd psd;
    psd.freq = j.at("psd").at("freq").get<std::vector<double>>();
    psd.power_db = dec_db_vec(j.at("psd").at("power_db"));
    m.psd = std::move(psd);
  }
  if (j.contains("spectrogram")) {
    Spectrogram sg;
    sg.freq = j.at("spectrogram").at("freq").get<std::vector<double>>();
    sg.time = j.at("spectrogram").at("time").get<std::vector<double>>();
    for (const json& row : j.at("spectrogram").at("power_db"))
      sg.power_db.push_back(dec_db_vec(row));
    m.spectrogram = std::move(sg);
  }
  m.warmup_discarded = j.at("warmup_discarded").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

json point_to_json(const PointReport& pt) {
  json j = json::object();
  if (!pt.error.empty()) j["error"] = pt.error;
  j["frequency"] = pt.frequency;
  json stages = json::array();
  for (const StageReport& st : pt.stages)
    stages.push_back({{"fallback_samples", st.fallback_samples},
                      {"metrics", metrics_to_json(st.metrics)},
                      {"name", st.name}});
  j["stages"] = stages;
  return j;
}

PointReport point_from_json(const json& j) {
  PointReport pt;
  if (j.contains("error")) pt.error = j.at("error").get<std::string>();
  pt.frequency = j.at("frequency").get<double>();
  for (const json& s : j.at("stages")) {
    StageReport st;
    st.name = s.at("name").get<std::string>();
    st.fallback_samples = s.at("fallback_samples").get<long long>();
    st.metrics = metrics_from_json(s.at("metrics"));
    pt.stages.push_back(std::move(st));
  }
  return pt;
}

}  // namespace

std::string emit_report(const RunReport& r) {
  json j = json::object();
  j["config"] = r.config_echo;
  j["seed"] = r.seed;
  j["sweep_axis"] = r.sweep_axis;
  if (!r.points.empty()) {
    json pts = json::array();
    for (const PointReport& pt : r.points) pts.push_back(point_to_json(pt));
    j["points"] = pts;
  }
  if (!r.rows.empty()) {
    json rows = json::array();
    for (const SweepRow& row : r.rows) {
      json rj = json::object();
      if (!row.error.empty()) rj["error"] = row.error;
      json pts = json::array();
      for (const PointReport& pt : row.points) pts.push_back(point_to_json(pt));
      rj["points"] = pts;
      rj["value"] = row.value;
      rows.push_back(rj);
    }
    j["rows"] = rows;
  }
  return j.dump();
}

RunReport parse_report(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("parse_report: ") + e.what());
  }
  RunReport r;
  r.config_echo = j.at("config");
  r.seed = j.at("seed").get<std::uint64_t>();
  r.sweep_axis = j.at("sweep_axis").get<std::string>();
  if (j.contains("points"))
    for (const json& pj : j.at("points")) r.points.push_back(point_from_json(pj));
  if (j.contains("rows")) {
    for (const json& rj : j.at("rows")) {
      SweepRow row;
      if (rj.contains("error")) row.error = rj.at("error").get<std::string>();
      row.value = rj.at("value").get<double>();
      for (const json& pj : rj.at("points"))
        row.points.push_back(point_from_json(pj));
      r.rows.push_back(std::move(row));
    }
  }
  return r;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0.0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("emit_outputs: cannot write '" + path.string() +
                             "'");
  return os;
}

void emit_point_tables(const PointReport& pt, const std::string& tag,
                       const std::filesystem::path& dir) {
  // PSD: frequency column plus one dB column per stage (shared grid).
  const Psd* grid = nullptr;
  for (const StageReport& st : pt.stages)
    if (st.metrics.psd) grid = &*st.metrics.psd;
  if (grid != nullptr) {
    std::ofstream os = open_out(dir / ("psd_" + tag + ".csv"));
    os << "frequency";
    for (const StageReport& st : pt.stages)
      if (st.metrics.psd) os << ',' << st.name;
    os << '\n';
    for (size_t i = 0; i < grid->freq.size(); ++i) {
      os << fmt(grid->freq[i]);
      for (const StageReport& st : pt.stages)
        if (st.metrics.psd) os << ',' << fmt(st.metrics.psd->power_db[i]);
      os << '\n';
    }
  }

  size_t symbols = 0;
  for (const StageReport& st : pt.stages)
    symbols = std::max(symbols, st.metrics.evm_per_symbol_db.size());
  if (symbols > 0) {
    std::ofstream os = open_out(dir / ("evm_" + tag + ".csv"));
    os << "symbol";
    for (const StageReport& st : pt.stages)
      if (!st.metrics.evm_per_symbol_db.empty()) os << ',' << st.name;
    os << '\n';
    for (size_t k = 0; k < symbols; ++k) {
      os << k;
      for (const StageReport& st : pt.stages) {
        const auto& trace = st.metrics.evm_per_symbol_db;
        if (trace.empty()) continue;
        os << ',';
        if (k < trace.size()) os << fmt(trace[k]);
      }
      os << '\n';
    }
  }

  for (const StageReport& st : pt.stages) {
    if (!st.metrics.spectrogram) continue;
    const Spectrogram& sg = *st.metrics.spectrogram;
    std::ofstream os =
        open_out(dir / ("spectrogram_" + st.name + "_" + tag + ".csv"));
    os << "time";
    for (double f : sg.freq) os << ',' << fmt(f);
    os << '\n';
    for (size_t t = 0; t < sg.time.size(); ++t) {
      os << fmt(sg.time[t]);
      for (double p : sg.power_db[t]) os << ',' << fmt(p);
      os << '\n';
    }
  }
}

void emit_summary_row(std::ofstream& os, const std::string& prefix,
                      const PointReport& pt) {
  if (pt.stages.empty()) {
    os << prefix << fmt(pt.frequency) << ",,,,,,,," << '"' << pt.error << '"'
       << '\n';
    return;
  }
  for (const StageReport& st : pt.stages) {
    const MetricsReport& m = st.metrics;
    os << prefix << fmt(pt.frequency) << ',' << st.name << ',';
    if (m.mse_db) os << fmt(*m.mse_db);
    os << ',';
    if (m.sfdr_dbc) os << fmt(*m.sfdr_dbc);
    os << ',';
    if (m.evm_rms_db) os << fmt(*m.evm_rms_db);
    os << ',';
    if (m.cfo_estimate) os << fmt(*m.cfo_estimate);
    os << ',';
    if (m.cfo_ratio_db) os << fmt(*m.cfo_ratio_db);
    os << ',' << st.fallback_samples << ',';
    if (!pt.error.empty()) os << '"' << pt.error << '"';
    os << '\n';
  }
}

}  // namespace

void emit_outputs(const RunReport& r, const std::string& dir) {
  std::filesystem::path base(dir);
  std::filesystem::create_directories(base);
  {
    std::ofstream os = open_out(base / "report.json");
    os << emit_report(r) << '\n';
  }

  const char* columns =
      "frequency,stage,mse_db,sfdr_dbc,evm_rms_db,cfo_estimate,cfo_ratio_db,"
      "fallback_samples,error";
  if (!r.points.empty()) {
    std::ofstream os = open_out(base / "points.csv");
    os << "point," << columns << '\n';
    for (size_t pi = 0; pi < r.points.size(); ++pi) {
      emit_summary_row(os, std::to_string(pi) + ",", r.points[pi]);
      emit_point_tables(r.points[pi], "p" + std::to_string(pi), base);
    }
  }
  if (!r.rows.empty()) {
    std::ofstream os = open_out(base / "sweep.csv");
    os << "value,point," << columns << '\n';
    for (size_t ri = 0; ri < r.rows.size(); ++ri) {
      const SweepRow& row = r.rows[ri];
      if (!row.error.empty() && row.points.empty()) {
        os << fmt(row.value) << ",,,,,,,,,," << '"' << row.error << '"' << '\n';
        continue;
      }
      for (size_t pi = 0; pi < row.points.size(); ++pi) {
        emit_summary_row(
            os, fmt(row.value) + "," + std::to_string(pi) + ",", row.points[pi]);
        emit_point_tables(row.points[pi],
                          "r" + std::to_string(ri) + "_p" + std::to_string(pi),
                          base);
      }
    }
  }
}

}  // namespace qlut
