#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "climex/signal_model.hpp"

using namespace climex;

namespace {

SawtoothArgs one_point(double f_d, double T_B, double phi, const std::vector<double>& t) {
  return {f_d, T_B, phi, t, {}, {}};
}

// Kolmogorov-Smirnov distance of samples against U(0, a).
double ks_uniform(std::vector<double> x, double a) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = x[i] / a;
    d = std::max({d, std::abs(F - i / n), std::abs((i + 1) / n - F)});
  }
  return d;
}

}  // namespace

TEST(Modulus, NonNegativeForNegativeArguments) {
  EXPECT_DOUBLE_EQ(pmod(-1.0, 3.0), 2.0);
  EXPECT_DOUBLE_EQ(pmod(7.5, 2.0), 1.5);
  EXPECT_DOUBLE_EQ(frac(-0.25), 0.75);
  EXPECT_DOUBLE_EQ(wrap_phase(-kTwoPi / 4), 3 * kTwoPi / 4);
}

TEST(SawtoothH, ZeroDifferenceFrequencyGivesZeros) {
  const std::vector<double> t = {0.0, 0.3, 1.7, 12.0};
  for (double v : sawtooth_h(one_point(0.0, 10e-9, 0.0, t))) EXPECT_EQ(v, 0.0);
}

TEST(SawtoothH, QuarterCycleIsQuarterPeriod) {
  const std::vector<double> t = {2.5e-3};
  EXPECT_NEAR(sawtooth_h(one_point(100.0, 10e-9, 0.0, t))[0], 2.5e-9, 1e-18);
}

TEST(SawtoothH, PeakToPeakWithinOneStepOfPeriod) {
  // 1 s at 10 kHz of a 37 Hz beat; brute-force max - min.
  const double T_B = 10e-9, f_d = 37.0, dt = 1e-4;
  std::vector<double> t(10000);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = i * dt;
  const auto h = sawtooth_h(one_point(f_d, T_B, 0.4, t));
  const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
  const double step = T_B * f_d * dt;
  EXPECT_LE(T_B - (*hi - *lo), step);
  EXPECT_LT(*hi, T_B);
  EXPECT_GE(*lo, 0.0);
}

TEST(SawtoothH, RejectsNonFiniteInput) {
  const std::vector<double> t = {0.0, NAN};
  EXPECT_THROW(sawtooth_h(one_point(1.0, 1e-8, 0.0, t)), invalid_argument);
  const std::vector<double> ok = {0.0};
  EXPECT_THROW(sawtooth_h(one_point(INFINITY, 1e-8, 0.0, ok)), invalid_argument);
}

TEST(SawtoothH, PeriodicInBeatPeriod) {
  const double f_d = 64.0;  // 1 / f_d exact in binary
  std::vector<double> t, t2;
  for (int i = 0; i < 50; ++i) {
    t.push_back(i * 1.0 / 1024.0);
    t2.push_back(t.back() + 1.0 / f_d);
  }
  const auto a = sawtooth_h(one_point(f_d, 10e-9, 0.9, t));
  const auto b = sawtooth_h(one_point(f_d, 10e-9, 0.9, t2));
  // A few ulp of T_B: 2 pi f t is rounded before the modulus.
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 16 * 2.2e-16 * 10e-9);
}

TEST(SawtoothG, ReducesBitwiseToH) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t(200), n(200);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = u(rng);
    n[i] = 1e-9 * (u(rng) - 0.5);
  }
  const std::vector<double> zero(200, 0.0);
  const SawtoothArgs a{123.4, 9.9e-9, 2.0, t, zero, n};
  EXPECT_EQ(sawtooth_g(a, 9.9e-9), sawtooth_h(a));
}

TEST(SawtoothG, HalfAmplitudeHalvesValue) {
  const std::vector<double> t = {2.5e-3};
  EXPECT_NEAR(sawtooth_g(one_point(100.0, 10e-9, 0.0, t), 5e-9)[0], 1.25e-9, 1e-18);
}

TEST(SawtoothG, UniformDitherGivesUniformOutput) {
  const int n = 100000;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 10e-9);
  std::vector<double> t(n, 0.0123), d(n);
  for (double& v : d) v = u(rng);
  const SawtoothArgs a{77.0, 10e-9, 1.1, t, d, {}};
  EXPECT_LT(ks_uniform(sawtooth_g(a, 4e-9), 4e-9), 0.01);
}

TEST(SawtoothRange, MillionRandomEvaluations) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 1000000;
  std::vector<double> t(n), d(n), e(n);
  for (int i = 0; i < n; ++i) {
    t[i] = 10.0 * u(rng);
    d[i] = 20e-9 * u(rng);
    e[i] = 5e-9 * (u(rng) - 0.5);
  }
  const SawtoothArgs a{-456.7, 10e-9, 5.0, t, d, e};
  const auto h = sawtooth_h(a);
  const auto g = sawtooth_g(a, 3e-9);
  for (int i = 0; i < n; ++i) {
    ASSERT_GE(h[i], 0.0);
    ASSERT_LT(h[i], 10e-9);
    ASSERT_GE(g[i], 0.0);
    ASSERT_LT(g[i], 3e-9);
  }
}

TEST(SawtoothRange, NearDiscontinuityStaysInRange) {
  // Phase just below a wrap, tiny noise of both signs.
  const double T_B = 10e-9;
  std::vector<double> t(2000, 0.0), n(2000);
  for (std::size_t i = 0; i < n.size(); ++i) n[i] = (i % 2 ? 1.0 : -1.0) * 1e-15 * (i + 1);
  const SawtoothArgs a{50.0, T_B, std::nextafter(kTwoPi, 0.0), t, {}, n};
  for (double v : sawtooth_h(a)) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, T_B);
    EXPECT_TRUE(v < 1e-11 || v > T_B - 1e-11);
  }
}

TEST(ScaleDelay, Examples) {
  EXPECT_DOUBLE_EQ(scale_delay(3e-9, 10e-9, 10e-9, 20e-9), 3e-9);
  EXPECT_EQ(scale_delay(0.0, 10e-9, 5e-9, 20e-9), 0.0);
  EXPECT_NEAR(scale_delay(25e-9, 10e-9, 5e-9, 20e-9), 25e-9 * 25.0 / 30.0, 1e-21);
  EXPECT_NEAR(scale_delay(25e-9, 10e-9, 5e-9, 20e-9), 20.833e-9, 1e-12);
}

TEST(ScaleDelay, MonotoneAndDomainChecked) {
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double v = scale_delay(i * 0.3e-9, 10e-9, 4e-9, 20e-9);
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_THROW(scale_delay(-1e-12, 10e-9, 5e-9, 20e-9), domain_error);
  EXPECT_THROW(scale_delay(31e-9, 10e-9, 5e-9, 20e-9), domain_error);
}

TEST(ClockParams, Invariants) {
  EXPECT_THROW((ClockParams{0.0, 0.0, 0.0}.validate()), invalid_argument);
  EXPECT_THROW((ClockParams{100.0, -100.0, 0.0}.validate()), invalid_argument);
  EXPECT_THROW((ClockParams{100.0, 0.0, -1.0}.validate()), invalid_argument);
  const ClockParams c{100e6, 250.0, 1e-9};
  EXPECT_DOUBLE_EQ(c.period(), 1.0 / (100e6 + 250.0));
}

TEST(ProtocolConstants, PingIntervalMustExceedTwoPeriods) {
  ProtocolConstants k;
  k.T_m = 15e-9;
  EXPECT_THROW(k.validate_against(10e-9), invalid_argument);
  k.T_m = 1e-4;
  EXPECT_NO_THROW(k.validate_against(10e-9));
}

TEST(NoiseModel, CompositeVariances) {
  const NoiseParams np{1e-9, 2e-9};
  Rng rng = make_rng(9, Stream::alice_noise);
  const int n = 1000000;
  double sn = 0.0, sw = 0.0, snw = 0.0;
  for (int i = 0; i < n; ++i) {
    const ExchangeNoise e = draw_exchange_noise(rng, np);
    sn += e.inner() * e.inner();
    sw += e.outer() * e.outer();
    snw += e.inner() * e.outer();
  }
  const double vn = sn / n, vw = sw / n;
  EXPECT_NEAR(vn / (4e-18 + 2e-18), 1.0, 0.03);
  EXPECT_NEAR(vw / (4e-18 + 1e-18), 1.0, 0.03);
  // Separate channel traverses and edges: n and w share no component.
  EXPECT_LT(std::abs(snw / n), 0.01 * std::sqrt(vn * vw));
}

TEST(RttModel, NoiseFreeConstantWhenNoBeat) {
  BeatParams b{0.0, 10e-9, 1e-4};
  ProtocolConstants k;
  k.N = 20;
  k.delta_0 = 20e-9;
  const auto ep = rtt_epoch_model(b, k, 7.0, 0.0, 0.5, {}, 1);
  for (double v : ep.values) EXPECT_DOUBLE_EQ(v, 20e-9 + 2 * 7.0 / k.c);
  EXPECT_EQ(ep.timestamp, 0.5);
}

TEST(RttModel, DistanceOffset) {
  BeatParams b{0.0, 10e-9, 1e-4};
  ProtocolConstants k;
  k.N = 5;
  k.delta_0 = 0.0;
  k.c = 3e8;
  const auto ep = rtt_epoch_model(b, k, 3.0, 0.0, 0.0, {}, 1);
  for (double v : ep.values) EXPECT_NEAR(v, 20e-9, 1e-20);
}

TEST(RttModel, NoiseCovarianceMatchesModel) {
  // Away from wraps the residual is n + w; across epochs the sample
  // covariance at two indices is diagonal with variance var(n) + var(w).
  BeatParams b{0.0, 1e-6, 1e-4};  // large period keeps samples off the wrap
  ProtocolConstants k;
  k.N = 2;
  k.delta_0 = 0.0;
  const NoiseParams np{1e-9, 2e-9};
  const double phi = kTwoPi / 2;
  const double mean = 0.5e-6;
  const int epochs = 10000;
  double s00 = 0, s11 = 0, s01 = 0;
  for (int e = 0; e < epochs; ++e) {
    const auto ep = rtt_epoch_model(b, k, 0.0, phi, 0.0, np, 1000 + e);
    const double a = ep.values[0] - mean, c = ep.values[1] - mean;
    s00 += a * a;
    s11 += c * c;
    s01 += a * c;
  }
  const double expect = (4e-18 + 2e-18) + (4e-18 + 1e-18);
  EXPECT_NEAR(s00 / epochs / expect, 1.0, 0.05);
  EXPECT_NEAR(s11 / epochs / expect, 1.0, 0.05);
  EXPECT_LT(std::abs(s01 / epochs) / expect, 0.05);
}

TEST(ClimexModel, ReducesToRttUnderSharedSeed) {
  const ClockParams a{100e6, 300.0, 1e-9}, bclk{100e6, 200.0, 1e-9};
  ProtocolConstants k;
  k.N = 300;
  k.A_scale = bclk.period();
  const NoiseParams np{1e-9, 2e-9};
  const std::vector<double> zero(k.N, 0.0);
  const auto r = rtt_epoch_model(a, bclk, k, 4.0, 1.3, 0.0, np, 5);
  const auto c = climex_epoch_model(a, bclk, k, 4.0, 1.3, 0.0, np, 5, zero);
  EXPECT_EQ(r.values, c.values);
}

TEST(ClimexModel, DependsOnlyOnDifferenceFrequency) {
  const double f0 = 100e6;
  ProtocolConstants k;
  k.N = 400;
  std::vector<double> d(k.N);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = 1e-9 * static_cast<double>(i % 7);
  // The model takes (f_d, T_B); both pairs feed it the same two numbers.
  const BeatParams p1{(f0 + 100) - f0, 10e-9, 1e-4};
  const BeatParams p2{(f0 + 600) - (f0 + 500), 10e-9, 1e-4};
  ASSERT_EQ(p1.f_d, p2.f_d);
  const auto e1 = climex_epoch_model(p1, k, 2.0, 0.7, 0.0, {}, 1, d);
  const auto e2 = climex_epoch_model(p2, k, 2.0, 0.7, 0.0, {}, 1, d);
  EXPECT_EQ(e1.values, e2.values);
}

TEST(ClimexModel, DitherInflatesVariance) {
  const ClockParams a{100e6, 100.0, 0.0}, b{100e6, 0.0, 0.0};
  ProtocolConstants k;
  k.N = 10000;
  k.A_scale = b.period();
  std::vector<double> zero(k.N, 0.0), dither(k.N);
  Rng rng = make_rng(4, Stream::alice_dither);
  std::uniform_real_distribution<double> u(0.0, a.period());
  for (double& v : dither) v = u(rng);
  const auto var = [](const std::vector<double>& x) {
    double m = 0, s = 0;
    for (double v : x) m += v;
    m /= x.size();
    for (double v : x) s += (v - m) * (v - m);
    return s / x.size();
  };
  // Both epochs fill [0, A) over whole beat cycles, so the scatter is taken
  // about the noise-free sawtooth.
  const auto clean = climex_epoch_model(a, b, k, 1.0, 0.2, 0.0, {0.1e-9, 0.1e-9}, 8, zero);
  const auto dith = climex_epoch_model(a, b, k, 1.0, 0.2, 0.0, {0.1e-9, 0.1e-9}, 8, dither);
  const SawtoothArgs model{100.0, b.period(), 0.2, clean.times, {}, {}};
  const auto g = sawtooth_g(model, k.A_scale);
  std::vector<double> rc(k.N), rd(k.N);
  for (std::size_t i = 0; i < k.N; ++i) {
    rc[i] = pmod(clean.values[i] - g[i] + 0.5 * k.A_scale, k.A_scale);
    rd[i] = pmod(dith.values[i] - g[i] + 0.5 * k.A_scale, k.A_scale);
  }
  EXPECT_GE(var(rd), 5.0 * var(rc));
}

TEST(Rng, StreamsAreIndependentAndReproducible) {
  Rng a = make_rng(42, Stream::alice_noise), b = make_rng(42, Stream::alice_noise);
  Rng c = make_rng(42, Stream::bob_noise);
  const auto x = a(), y = b(), z = c();
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
}
