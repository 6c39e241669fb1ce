#include "qlut/lut.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

namespace qlut {
namespace {

constexpr int kMaxIndexBits = 63;
constexpr int kMaxMaterializedBits = 24;
constexpr std::uint32_t kFileVersion = 1;
constexpr char kMagic[4] = {'Q', 'L', 'U', 'T'};

void check_code(int code, int levels, const char* where) {
  if (code < 1 || code > levels)
    throw std::invalid_argument(std::string(where) + ": code out of range");
}

// FNV-1a, 64-bit.
struct Fnv {
  std::uint64_t h = 14695981039346656037ull;

  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void interval(const Interval& iv) {
    f64(iv.lo);
    f64(iv.hi);
  }
};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("lut file: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("lut file: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void parallel_indices(std::uint64_t count, int workers,
                      const std::function<void(std::uint64_t)>& fn) {
  if (workers <= 1 || count < 2) {
    for (std::uint64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  constexpr std::uint64_t kChunk = 256;
  std::atomic<std::uint64_t> next{0};
  auto drain = [&] {
    for (;;) {
      std::uint64_t lo = next.fetch_add(kChunk);
      if (lo >= count) return;
      std::uint64_t hi = std::min(count, lo + kChunk);
      for (std::uint64_t i = lo; i < hi; ++i) fn(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) pool.emplace_back(drain);
  drain();
  for (auto& t : pool) t.join();
}

}  // namespace

std::uint64_t window_index(const ObservationWindow& y, int bits) {
  if (bits < 1) throw std::invalid_argument("window_index: bits must be >= 1");
  int n = static_cast<int>(y.codes.size());
  if (n < 1) throw std::invalid_argument("window_index: empty window");
  if (bits * n > kMaxIndexBits)
    throw std::invalid_argument("window_index: packed window exceeds 63 bits");
  int levels = 1 << bits;
  std::uint64_t idx = 0;
  for (int t = 0; t < n; ++t) {
    check_code(y.codes[static_cast<size_t>(t)], levels, "window_index");
    idx |= static_cast<std::uint64_t>(y.codes[static_cast<size_t>(t)] - 1)
           << (bits * t);
  }
  return idx;
}

ObservationWindow window_unpack(std::uint64_t index, int bits, int window) {
  if (bits < 1) throw std::invalid_argument("window_unpack: bits must be >= 1");
  if (window < 1) throw std::invalid_argument("window_unpack: window must be >= 1");
  if (bits * window > kMaxIndexBits)
    throw std::invalid_argument("window_unpack: packed window exceeds 63 bits");
  if (index >= (std::uint64_t{1} << (bits * window)))
    throw std::invalid_argument("window_unpack: index out of range");
  std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  ObservationWindow y;
  y.codes.resize(static_cast<size_t>(window));
  for (int t = 0; t < window; ++t)
    y.codes[static_cast<size_t>(t)] = static_cast<int>((index >> (bits * t)) & mask) + 1;
  return y;
}

std::uint64_t scenario_hash(const ScenarioModel& s, const EstimatorConfig& cfg) {
  Fnv f;
  f.u64(static_cast<std::uint64_t>(s.quantizer.bits()));
  f.f64(s.quantizer.step());
  for (double t : s.quantizer.thresholds()) f.f64(t);
  for (double r : s.quantizer.reconstruction_levels()) f.f64(r);
  f.u64(static_cast<std::uint64_t>(s.window));
  f.f64(s.prior.sigma);
  f.interval(s.prior.amp);
  f.interval(s.prior.freq);
  f.u64(static_cast<std::uint64_t>(s.desired_kind));
  if (s.desired_kind == DesiredKind::bpsk) {
    f.u64(static_cast<std::uint64_t>(s.bpsk.tau));
    BpskLikelihoodMode mode =
        cfg.bpsk_mode ? *cfg.bpsk_mode : default_bpsk_mode(s);
    f.u64(static_cast<std::uint64_t>(mode));
  }
  f.u64(static_cast<std::uint64_t>(s.interferer_kind));
  if (s.interferer_kind != InterfererKind::none) {
    f.interval(s.prior.intf_amp);
    f.interval(s.prior.intf_freq);
  }
  f.u64(static_cast<std::uint64_t>(cfg.quad.x0_nodes));
  f.u64(static_cast<std::uint64_t>(cfg.quad.phase_nodes));
  f.u64(static_cast<std::uint64_t>(cfg.quad.freq_nodes));
  f.u64(static_cast<std::uint64_t>(cfg.quad.amp_nodes));
  f.f64(cfg.quad.refine_tol);
  f.u64(static_cast<std::uint64_t>(cfg.kind));
  return f.h;
}

const char* to_string(LutMode m) {
  switch (m) {
    case LutMode::materialized: return "materialized";
    case LutMode::memoized: return "memoized";
  }
  throw std::invalid_argument("to_string: unknown lut mode");
}

LutMode lut_mode_from_string(const std::string& name) {
  if (name == "materialized") return LutMode::materialized;
  if (name == "memoized") return LutMode::memoized;
  throw std::invalid_argument("lut_mode_from_string: unknown mode '" + name + "'");
}

Lut::Lut(const ScenarioModel& s, const EstimatorConfig& cfg, LutMode mode,
         int workers)
    : Lut(s, cfg, mode, workers, true) {}

Lut::Lut(const ScenarioModel& s, const EstimatorConfig& cfg, LutMode mode,
         int workers, bool build)
    : mode_(mode),
      bits_(s.quantizer.bits()),
      window_(s.window),
      hash_(scenario_hash(s, cfg)),
      cfg_(cfg),
      est_(s, cfg),
      mu_(std::make_unique<std::mutex>()) {
  if (window_ < 1) throw std::invalid_argument("Lut: window must be >= 1");
  int index_bits = bits_ * window_;
  if (index_bits > kMaxIndexBits)
    throw std::invalid_argument("Lut: packed window exceeds 63 bits");
  if (mode_ == LutMode::materialized && index_bits > kMaxMaterializedBits)
    throw std::invalid_argument(
        "Lut: materialized table would need 2^" + std::to_string(index_bits) +
        " entries (limit 2^" + std::to_string(kMaxMaterializedBits) +
        "); use the memoized mode");
  capacity_ = std::uint64_t{1} << index_bits;
  if (mode_ == LutMode::materialized) {
    values_.resize(static_cast<size_t>(capacity_));
    flags_.assign(static_cast<size_t>(capacity_), 0);
    if (build) {
      if (workers < 1) workers = 1;
      parallel_indices(capacity_, workers, [&](std::uint64_t i) {
        LutEntry e = compute(i);
        values_[static_cast<size_t>(i)] = e.value;
        flags_[static_cast<size_t>(i)] = e.fallback ? 1 : 0;
      });
    }
  }
}

LutEntry Lut::compute(std::uint64_t index) const {
  Estimate e = est_(window_unpack(index, bits_, window_));
  return {e.value, e.fallback};
}

LutEntry Lut::at(const ObservationWindow& y) {
  if (static_cast<int>(y.codes.size()) != window_)
    throw std::invalid_argument("Lut::at: window length mismatch");
  return at_index(window_index(y, bits_));
}

LutEntry Lut::at_index(std::uint64_t index) {
  if (index >= capacity_)
    throw std::invalid_argument("Lut::at_index: index out of range");
  if (mode_ == LutMode::materialized)
    return {values_[static_cast<size_t>(index)],
            flags_[static_cast<size_t>(index)] != 0};
  {
    std::lock_guard<std::mutex> lock(*mu_);
    auto it = map_.find(index);
    if (it != map_.end()) return it->second;
  }
  // Computed outside the lock: concurrent misses on the same key may both
  // compute, but the results are identical and the first insert wins.
  LutEntry e = compute(index);
  std::lock_guard<std::mutex> lock(*mu_);
  return map_.emplace(index, e).first->second;
}

std::size_t Lut::size() const {
  if (mode_ == LutMode::materialized) return values_.size();
  std::lock_guard<std::mutex> lock(*mu_);
  return map_.size();
}

std::size_t Lut::fallback_count() const {
  if (mode_ == LutMode::materialized)
    return static_cast<std::size_t>(
        std::count(flags_.begin(), flags_.end(), std::uint8_t{1}));
  std::lock_guard<std::mutex> lock(*mu_);
  std::size_t n = 0;
  for (const auto& kv : map_) n += kv.second.fallback ? 1 : 0;
  return n;
}

std::vector<std::pair<std::uint64_t, LutEntry>> Lut::entries() const {
  std::vector<std::pair<std::uint64_t, LutEntry>> out;
  if (mode_ == LutMode::materialized) {
    out.reserve(values_.size());
    for (std::uint64_t i = 0; i < capacity_; ++i)
      out.emplace_back(i, LutEntry{values_[static_cast<size_t>(i)],
                                   flags_[static_cast<size_t>(i)] != 0});
    return out;
  }
  {
    std::lock_guard<std::mutex> lock(*mu_);
    out.reserve(map_.size());
    for (const auto& kv : map_) out.emplace_back(kv.first, kv.second);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

// File layout (all integers little-endian):
//   offset  0, 4 bytes: magic "QLUT"
//   offset  4, u32: format version (1)
//   offset  8, u32: quantizer bits
//   offset 12, u32: window length
//   offset 16, u32: estimator kind (0 mmse, 1 ml, 2 map, 3 lmmse)
//   offset 20, u32: table mode (0 materialized, 1 memoized)
//   offset 24, u64: scenario hash
//   offset 32, u64: entry count
//   offset 40: count records of (u64 window index, f64 estimate bits,
//              u8 flags where bit 0 = fallback), sorted by strictly
//              increasing index, nothing after the last record.
void Lut::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("Lut::save: cannot open '" + path + "'");
  auto all = entries();
  os.write(kMagic, 4);
  put_u32(os, kFileVersion);
  put_u32(os, static_cast<std::uint32_t>(bits_));
  put_u32(os, static_cast<std::uint32_t>(window_));
  put_u32(os, static_cast<std::uint32_t>(cfg_.kind));
  put_u32(os, static_cast<std::uint32_t>(mode_));
  put_u64(os, hash_);
  put_u64(os, static_cast<std::uint64_t>(all.size()));
  for (const auto& [idx, e] : all) {
    put_u64(os, idx);
    put_u64(os, std::bit_cast<std::uint64_t>(e.value));
    char flags = e.fallback ? 1 : 0;
    os.write(&flags, 1);
  }
  if (!os) throw std::runtime_error("Lut::save: write failed for '" + path + "'");
}

Lut Lut::load(const std::string& path, const ScenarioModel& s,
              const EstimatorConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("Lut::load: cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic))
    throw std::runtime_error("Lut::load: not a lut file");
  if (get_u32(is) != kFileVersion)
    throw std::runtime_error("Lut::load: unsupported format version");
  std::uint32_t bits = get_u32(is);
  std::uint32_t window = get_u32(is);
  std::uint32_t kind = get_u32(is);
  std::uint32_t mode = get_u32(is);
  std::uint64_t hash = get_u64(is);
  std::uint64_t count = get_u64(is);
  if (mode > static_cast<std::uint32_t>(LutMode::memoized))
    throw std::runtime_error("Lut::load: unknown table mode");
  if (bits != static_cast<std::uint32_t>(s.quantizer.bits()) ||
      window != static_cast<std::uint32_t>(s.window) ||
      kind != static_cast<std::uint32_t>(cfg.kind) ||
      hash != scenario_hash(s, cfg))
    throw std::runtime_error(
        "Lut::load: file was built from a different scenario or estimator");
  Lut lut(s, cfg, static_cast<LutMode>(mode), 1, false);
  if (lut.mode_ == LutMode::materialized && count != lut.capacity_)
    throw std::runtime_error("Lut::load: materialized table is incomplete");
  if (count > lut.capacity_)
    throw std::runtime_error("Lut::load: entry count exceeds table capacity");
  std::uint64_t prev = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t idx = get_u64(is);
    double value = std::bit_cast<double>(get_u64(is));
    char flags;
    if (!is.read(&flags, 1)) throw std::runtime_error("lut file: truncated");
    if ((i > 0 && idx <= prev) || idx >= lut.capacity_)
      throw std::runtime_error("Lut::load: entry indices out of order");
    if (flags != 0 && flags != 1)
      throw std::runtime_error("Lut::load: unknown entry flags");
    if (!std::isfinite(value))
      throw std::runtime_error("Lut::load: non-finite estimate");
    prev = idx;
    if (lut.mode_ == LutMode::materialized) {
      lut.values_[static_cast<size_t>(idx)] = value;
      lut.flags_[static_cast<size_t>(idx)] = flags != 0 ? 1 : 0;
    } else {
      lut.map_.emplace(idx, LutEntry{value, flags != 0});
    }
  }
  if (is.peek() != std::ifstream::traits_type::eof())
    throw std::runtime_error("Lut::load: trailing bytes after entries");
  return lut;
}

CorrectionPipeline make_pipeline(const ScenarioModel& s, const EstimatorConfig& cfg,
                                 LutMode mode, bool dither, std::uint64_t seed,
                                 int workers) {
  s.validate();
  CorrectionPipeline p{std::nullopt, make_uniform_midriser(s.quantizer.bits()),
                       dither, seed};
  if (s.window > 0) p.lut.emplace(s, cfg, mode, workers);
  return p;
}

std::vector<int> requantize_stream(const Quantizer& q,
                                   const std::vector<double>& estimates,
                                   bool dither, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> out(estimates.size());
  for (size_t i = 0; i < estimates.size(); ++i)
    out[i] = dither ? q.requantize_dithered(estimates[i], rng)
                    : q.quantize(estimates[i], rng);
  return out;
}

CorrectedStream correct_stream(CorrectionPipeline& p, const std::vector<int>& codes) {
  return correct_stream(p.lut ? &*p.lut : nullptr, p.requantizer, p.dither,
                        p.seed, codes);
}

CorrectedStream correct_stream(Lut* lut, const Quantizer& requantizer,
                               bool dither, std::uint64_t seed,
                               const std::vector<int>& codes) {
  int n = lut ? lut->window() : 0;
  if (lut && lut->bits() != requantizer.bits())
    throw std::invalid_argument(
        "correct_stream: requantizer resolution does not match the table");
  if (static_cast<int>(codes.size()) < n)
    throw std::invalid_argument("correct_stream: stream shorter than the window");
  int levels = requantizer.levels();
  for (int code : codes) check_code(code, levels, "correct_stream");

  CorrectedStream out;
  out.estimates.resize(codes.size());
  out.fallback.assign(codes.size(), 0);
  ObservationWindow y;
  y.codes.resize(static_cast<size_t>(n));
  for (size_t i = 0; i < codes.size(); ++i) {
    if (n == 0 || i + 1 < static_cast<size_t>(n)) {
      // Not enough history yet (or reference mode): midpoint reconstruction.
      out.estimates[i] = requantizer.reconstruct(codes[i]);
    } else {
      std::copy(codes.begin() + static_cast<long>(i + 1 - static_cast<size_t>(n)),
                codes.begin() + static_cast<long>(i + 1), y.codes.begin());
      LutEntry e = lut->at(y);
      out.estimates[i] = e.value;
      out.fallback[i] = e.fallback ? 1 : 0;
    }
  }
  out.requantized = requantize_stream(requantizer, out.estimates, dither, seed);
  return out;
}

LutFileInfo lut_file_info(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("lut_file_info: cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic))
    throw std::runtime_error("lut_file_info: not a lut file");
  if (get_u32(is) != kFileVersion)
    throw std::runtime_error("lut_file_info: unsupported format version");
  LutFileInfo info;
  info.bits = static_cast<int>(get_u32(is));
  info.window = static_cast<int>(get_u32(is));
  std::uint32_t kind = get_u32(is);
  std::uint32_t mode = get_u32(is);
  info.hash = get_u64(is);
  info.count = get_u64(is);
  if (kind > static_cast<std::uint32_t>(EstimatorKind::lmmse))
    throw std::runtime_error("lut_file_info: unknown estimator kind");
  if (mode > static_cast<std::uint32_t>(LutMode::memoized))
    throw std::runtime_error("lut_file_info: unknown table mode");
  if (info.bits < 1 || info.bits > kMaxIndexBits || info.window < 1 ||
      info.window > kMaxIndexBits || info.bits * info.window > kMaxIndexBits)
    throw std::runtime_error("lut_file_info: implausible table geometry");
  info.kind = static_cast<EstimatorKind>(kind);
  info.mode = static_cast<LutMode>(mode);
  info.capacity = 1ULL << (static_cast<unsigned>(info.bits) *
                           static_cast<unsigned>(info.window));
  for (std::uint64_t i = 0; i < info.count; ++i) {
    get_u64(is);
    get_u64(is);
    char flags;
    if (!is.read(&flags, 1)) throw std::runtime_error("lut file: truncated");
    if (flags != 0) ++info.fallbacks;
  }
  return info;
}

}  // namespace qlut
