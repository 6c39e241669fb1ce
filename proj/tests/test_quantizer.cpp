#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "qlut/quantizer.hpp"
#include "qlut/rng.hpp"

using namespace qlut;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("uniform mid-riser geometry, 3 bits") {
  Quantizer q = make_uniform_midriser(3);
  CHECK(q.bits() == 3);
  CHECK(q.levels() == 8);
  CHECK(q.step() == 0.25);

  const auto& thr = q.thresholds();
  REQUIRE(thr.size() == 9);
  CHECK(thr.front() == -kInf);
  CHECK(thr.back() == kInf);
  for (int j = 1; j <= 7; ++j) CHECK(thr[j] == doctest::Approx(j * 0.25 - 1.0).epsilon(1e-15));

  const auto& recon = q.reconstruction_levels();
  REQUIRE(recon.size() == 8);
  CHECK(recon.front() == doctest::Approx(-0.875));
  CHECK(recon.back() == doctest::Approx(0.875));
  for (int k = 1; k <= 8; ++k)
    CHECK(q.reconstruct(k) == doctest::Approx((k - 0.5) * 0.25 - 1.0).epsilon(1e-15));
}

TEST_CASE("uniform mid-riser geometry, other widths") {
  Quantizer q1 = make_uniform_midriser(1);
  CHECK(q1.step() == 1.0);
  CHECK(q1.levels() == 2);
  CHECK(q1.thresholds()[1] == 0.0);
  CHECK(q1.reconstruct(1) == -0.5);
  CHECK(q1.reconstruct(2) == 0.5);

  Quantizer q2 = make_uniform_midriser(2);
  CHECK(q2.step() == 0.5);
  CHECK(q2.thresholds()[2] == 0.0);

  CHECK_THROWS_AS(make_uniform_midriser(0), std::invalid_argument);
  CHECK_THROWS_AS(make_uniform_midriser(25), std::invalid_argument);
}

TEST_CASE("quantize maps interiors, saturates tails") {
  Quantizer q = make_uniform_midriser(3);
  Rng rng(1);
  CHECK(q.quantize(0.12, rng) == 5);  // cell (0, 0.25)
  CHECK(q.quantize(-0.99, rng) == 1);
  CHECK(q.quantize(-5.0, rng) == 1);   // below range saturates
  CHECK(q.quantize(5.0, rng) == 8);    // above range saturates
  CHECK(q.quantize(0.87, rng) == 8);
  CHECK(q.quantize(-0.76, rng) == 1);
  CHECK_THROWS_AS(q.quantize(std::nan(""), rng), std::invalid_argument);
  CHECK_THROWS_AS(q.quantize(kInf, rng), std::invalid_argument);
}

TEST_CASE("quantize is monotone in the input") {
  Quantizer q = make_uniform_midriser(4);
  Rng rng(7);
  std::vector<double> xs(2000);
  for (auto& x : xs) x = rng.uniform(-1.5, 1.5);
  std::sort(xs.begin(), xs.end());
  int prev = 1;
  for (double x : xs) {
    int code = q.quantize(x, rng);
    CHECK(code >= prev);
    prev = code;
  }
}

TEST_CASE("exact threshold hit resolves to either neighbor half the time") {
  Quantizer q = make_uniform_midriser(3);
  Rng rng(42);
  int above = 0;
  const int trials = 20000;
  for (int i = 0; i < trials; ++i) {
    int code = q.quantize(0.0, rng);  // threshold between codes 4 and 5
    REQUIRE((code == 4 || code == 5));
    if (code == 5) ++above;
  }
  // 4-sigma binomial band around 1/2.
  double f = static_cast<double>(above) / trials;
  CHECK(std::abs(f - 0.5) < 4.0 * 0.5 / std::sqrt(static_cast<double>(trials)));
}

TEST_CASE("constructor rejects malformed configurations") {
  std::vector<double> thr = {-kInf, -0.5, 0.0, 0.5, kInf};
  std::vector<double> recon = {-0.75, -0.25, 0.25, 0.75};
  CHECK_NOTHROW(Quantizer(2, thr, recon, 0.5));

  auto bad_thr = thr;
  bad_thr[0] = -2.0;  // missing -inf sentinel
  CHECK_THROWS_AS(Quantizer(2, bad_thr, recon, 0.5), std::invalid_argument);

  bad_thr = thr;
  bad_thr[2] = -0.6;  // interior non-monotone
  CHECK_THROWS_AS(Quantizer(2, bad_thr, recon, 0.5), std::invalid_argument);

  auto bad_recon = recon;
  std::swap(bad_recon[1], bad_recon[2]);
  CHECK_THROWS_AS(Quantizer(2, thr, bad_recon, 0.5), std::invalid_argument);

  CHECK_THROWS_AS(Quantizer(2, {-kInf, 0.0, kInf}, recon, 0.5), std::invalid_argument);
}

TEST_CASE("threshold perturbation shifts edges, keeps reconstruction") {
  Quantizer base = make_uniform_midriser(3);
  std::vector<double> inl = {-0.4, -1.3, -0.7, 0.2, 1.1, 0.3, -0.3};
  Quantizer q = apply_inl(base, inl);
  const auto& thr = q.thresholds();
  for (int i = 0; i < 7; ++i)
    CHECK(thr[i + 1] ==
          doctest::Approx(base.thresholds()[i + 1] + inl[i] * 0.25).epsilon(1e-15));
  CHECK(q.reconstruction_levels() == base.reconstruction_levels());
  CHECK(q.step() == base.step());

  CHECK_THROWS_AS(apply_inl(base, {0.1, 0.2}), std::invalid_argument);
  // Crossing thresholds: +3 then -3 steps swaps the order of two edges.
  CHECK_THROWS_AS(apply_inl(base, {0.0, 3.0, -3.0, 0.0, 0.0, 0.0, 0.0}),
                  std::invalid_argument);
}

TEST_CASE("perturbed quantizer still quantizes by its own edges") {
  Quantizer base = make_uniform_midriser(3);
  Quantizer q = apply_inl(base, {-0.4, -1.3, -0.7, 0.2, 1.1, 0.3, -0.3});
  Rng rng(3);
  // Edge between codes 4 and 5 moved from 0 to 0.05.
  CHECK(q.quantize(0.02, rng) == 4);
  CHECK(base.quantize(0.02, rng) == 5);
  CHECK(q.quantize(0.07, rng) == 5);
}

TEST_CASE("dithered requantization error law") {
  // Conditional on input x at distance d from the nearest reconstruction
  // level, rectangular dither of one step width makes the squared error
  // average |d|(step - |d|); uniformly over in-range x this averages
  // step^2/6, versus step^2/12 undithered.
  Quantizer q = make_uniform_midriser(3);
  const double step = q.step();

  SUBCASE("pointwise law at fixed x") {
    Rng rng(11);
    double x = 0.06;  // nearest level 0.125, d = 0.065
    double d = 0.065;
    double acc = 0.0;
    const int trials = 200000;
    for (int i = 0; i < trials; ++i) {
      double e = q.reconstruct(q.requantize_dithered(x, rng)) - x;
      acc += e * e;
    }
    CHECK(acc / trials == doctest::Approx(d * (step - d)).epsilon(0.02));
  }

  SUBCASE("averaged over in-range inputs") {
    Rng rng(12);
    const int trials = 300000;
    double acc_dith = 0.0, acc_plain = 0.0;
    for (int i = 0; i < trials; ++i) {
      double x = rng.uniform(-(1.0 - step), 1.0 - step);
      double ed = q.reconstruct(q.requantize_dithered(x, rng)) - x;
      double ep = q.reconstruct(q.quantize(x, rng)) - x;
      acc_dith += ed * ed;
      acc_plain += ep * ep;
    }
    CHECK(acc_dith / trials == doctest::Approx(step * step / 6.0).epsilon(0.01));
    CHECK(acc_plain / trials == doctest::Approx(step * step / 12.0).epsilon(0.01));
  }
}
