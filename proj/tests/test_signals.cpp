#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "qlut/signals.hpp"

using namespace qlut;

TEST_CASE("tone hits known sample values") {
  ToneParams p{0.875, 0.25, 0.0};
  auto x = gen_tone(p, 0, 8);
  // One cycle every 4 samples: A, 0, -A, 0, ...
  for (int n = 0; n < 8; ++n) {
    double want = (n % 4 == 0) ? 0.875 : (n % 4 == 2) ? -0.875 : 0.0;
    CHECK(x[n] == doctest::Approx(want).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("tone chunks concatenate seamlessly") {
  ToneParams p{1.0, 0.0625 + M_PI / 1000, 0.3};
  auto whole = gen_tone(p, 0, 50);
  auto head = gen_tone(p, 0, 20);
  auto tail = gen_tone(p, 20, 30);
  for (int i = 0; i < 20; ++i) CHECK(whole[i] == head[i]);
  for (int i = 0; i < 30; ++i) CHECK(whole[20 + i] == tail[i]);
}

TEST_CASE("bpsk flips phase by pi at symbol boundaries") {
  BpskParams p;
  p.amplitude = 1.0;
  p.frequency = 0.0;  // carrier contributes no phase, bare symbol values
  p.phase = 0.0;
  p.tau = 4;
  p.offset = 2;
  p.bits = {0, 1, 1, 0};
  auto x = gen_bpsk(p, 0, 14);
  // Sample n sits in symbol floor((n + offset)/tau); value is +1 when the
  // symbol bit equals bit 0, else -1.
  std::vector<double> want = {1, 1, -1, -1, -1, -1, -1, -1, -1, -1, 1, 1, 1, 1};
  for (int n = 0; n < 14; ++n) CHECK(x[n] == doctest::Approx(want[n]).epsilon(1e-12));
}

TEST_CASE("bpsk with explicit bits rejects out-of-range symbols") {
  BpskParams p;
  p.tau = 4;
  p.bits = {0, 1};
  CHECK_THROWS_AS(gen_bpsk(p, -1, 2), std::invalid_argument);  // symbol -1
  CHECK_THROWS_AS(gen_bpsk(p, 0, 9), std::invalid_argument);   // symbol 2
  CHECK_NOTHROW(gen_bpsk(p, 0, 8));
}

TEST_CASE("bpsk seeded bits are deterministic and balanced") {
  BpskParams p;
  p.amplitude = 1.0;
  p.tau = 10;
  p.bit_seed = 99;
  auto a = gen_bpsk(p, 0, 500);
  auto b = gen_bpsk(p, 0, 500);
  CHECK(a == b);

  int ones = 0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) ones += bpsk_bit(p, k);
  double f = static_cast<double>(ones) / n;
  CHECK(std::abs(f - 0.5) < 4.0 * 0.5 / std::sqrt(static_cast<double>(n)));

  // Random access agrees with itself regardless of query order.
  CHECK(bpsk_bit(p, 12345) == bpsk_bit(p, 12345));
  p.bit_seed = 100;
  auto c = gen_bpsk(p, 0, 500);
  CHECK(a != c);
}

TEST_CASE("lfm sweeps a sawtooth instantaneous frequency") {
  LfmParams p;
  p.amplitude = 1.0;
  p.center_frequency = 0.25;
  p.sweep_width = 0.1;
  p.repeat_interval = 10;
  p.phase = 0.0;
  auto x = gen_lfm(p, 0, 21);
  // f(n) = 0.2 + 0.01 (n mod 10); x_n = cos(2 pi f(n) n).
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x[5] == doctest::Approx(std::cos(2 * M_PI * 0.25 * 5)).epsilon(1e-9).scale(1.0));
  CHECK(x[10] == doctest::Approx(std::cos(2 * M_PI * 0.2 * 10)).epsilon(1e-9));
  CHECK(x[20] == doctest::Approx(std::cos(2 * M_PI * 0.2 * 20)).epsilon(1e-9));
}

TEST_CASE("gaussian noise moments and central mass") {
  Rng rng(5);
  const double sigma = 0.04;
  auto w = gen_noise_gaussian(sigma, rng, 100000);
  double mean = 0.0, var = 0.0;
  int central = 0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w) {
    var += (v - mean) * (v - mean);
    if (std::abs(v) <= sigma) ++central;
  }
  var /= static_cast<double>(w.size());
  CHECK(std::abs(mean) < 4 * sigma / std::sqrt(1e5));
  CHECK(var == doctest::Approx(sigma * sigma).epsilon(0.02));
  CHECK(static_cast<double>(central) / w.size() == doctest::Approx(0.682689).epsilon(0.01));

  auto silent = gen_noise_gaussian(0.0, rng, 10);
  for (double v : silent) CHECK(v == 0.0);
  CHECK_THROWS_AS(gen_noise_gaussian(-0.1, rng, 10), std::invalid_argument);
}

TEST_CASE("rectangular dither bounds and moments") {
  Rng rng(6);
  const double step = 0.25;
  auto d = gen_dither_rect(step, rng, 100000);
  double mean = 0.0, var = 0.0;
  for (double v : d) {
    CHECK(std::abs(v) <= step / 2);
    mean += v;
  }
  mean /= static_cast<double>(d.size());
  for (double v : d) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d.size());
  CHECK(std::abs(mean) < 4 * (step / std::sqrt(12.0)) / std::sqrt(1e5));
  CHECK(var == doctest::Approx(step * step / 12.0).epsilon(0.02));
  CHECK_THROWS_AS(gen_dither_rect(0.0, rng, 5), std::invalid_argument);
}

TEST_CASE("rectangular density") {
  CHECK(rect_density(2.0, 0.0) == 0.5);
  CHECK(rect_density(2.0, 1.0) == 0.5);   // boundary inclusive
  CHECK(rect_density(2.0, 1.01) == 0.0);
  CHECK(rect_density(0.5, -0.3) == 0.0);
  CHECK_THROWS_AS(rect_density(0.0, 0.0), std::invalid_argument);
}

TEST_CASE("scenario validation rejects bad fields") {
  ScenarioModel s;
  s.tone = {0.875, M_PI / 10 / (2 * M_PI), 0.0};
  s.prior.amp = {0.875, 0.875};
  s.prior.freq = {s.tone.frequency, s.tone.frequency};
  s.prior.sigma = 0.04;
  s.window = 4;
  CHECK_NOTHROW(s.validate());

  auto bad = s;
  bad.tone.frequency = 0.6;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = s;
  bad.prior.sigma = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = s;
  bad.prior.amp = {1.0, 0.5};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = s;
  bad.desired_kind = DesiredKind::bpsk;
  bad.bpsk.tau = 50;
  bad.bpsk.offset = 50;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("assembled input is deterministic and self-consistent") {
  ScenarioModel s;
  s.tone = {0.875, 0.05, 0.2};
  s.interferer_kind = InterfererKind::tone;
  s.intf_tone = {0.4, 0.31, 1.1};
  s.prior.amp = {0.875, 0.875};
  s.prior.freq = {0.05, 0.05};
  s.prior.sigma = 0.04;
  s.window = 8;

  Rng r1(123), r2(123), r3(124);
  auto a = assemble_input(s, r1, 400);
  auto b = assemble_input(s, r2, 400);
  CHECK(a.codes == b.codes);
  CHECK(a.composite == b.composite);
  auto c = assemble_input(s, r3, 400);
  CHECK(a.codes != c.codes);

  // clean + interferer + noise should reproduce composite; with sigma = 0 the
  // codes are the quantized composite exactly.
  ScenarioModel s0 = s;
  s0.prior.sigma = 0.0;
  Rng r4(9), r5(9);
  auto d = assemble_input(s0, r4, 200);
  auto zs = gen_tone(s0.intf_tone, 0, 200);
  Rng check_rng(77);
  for (int i = 0; i < 200; ++i) {
    CHECK(d.composite[i] == doctest::Approx(d.clean[i] + zs[i]).epsilon(1e-12));
    CHECK(d.codes[i] == s0.quantizer.quantize(d.composite[i], check_rng));
  }

  ScenarioModel sn = s;
  sn.interferer_kind = InterfererKind::none;
  Rng r6(9);
  auto e = assemble_input(sn, r6, 200);
  sn.prior.sigma = 0.0;
  Rng r7(9);
  auto f = assemble_input(sn, r7, 200);
  CHECK(f.clean == f.composite);
  CHECK(e.clean == f.clean);
}
