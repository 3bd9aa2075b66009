#pragma once

// Secret-bit accounting over quantized clock offsets, phase and distance.
//
// Offsets of both clocks lie in [-ppm f0 / 2, ppm f0 / 2], tiled by cells of width
// df_bin. A pair of cells counts by the fraction of its area where the offset
// difference is inside [f_min, f_max]; inside one cell pair the difference is
// triangular, so the fraction is exact. Summed over all pairs this is the
// area of the admissible band in units of df_bin^2.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "climex/errors.hpp"
#include "climex/signal_model.hpp"

namespace climex {

struct BudgetInputs {
  double ppm = 10.0;  // full tolerance width: offsets span +-ppm/2
  double f0 = 100e6;      // Hz
  double df_bin = 1.0;    // Hz
  double f_min = 2.0;     // Hz, smallest certified |f_d|
  double f_max = 1000.0;  // Hz, largest certified |f_d|
  double phi_res = 0.1;   // rad
  double rho_range = 100.0;  // m
  double rho_res = 0.02;     // m

  double offset_bound() const { return 0.5 * ppm * 1e-6 * f0; }
  // Cells per clock.
  std::size_t bins() const {
    return static_cast<std::size_t>(std::llround(2.0 * offset_bound() / df_bin));
  }

  void validate() const {
    if (!(ppm > 0.0) || !(f0 > 0.0) || !(df_bin > 0.0))
      throw invalid_argument("ppm, f0 and df_bin must be positive");
    if (!(f_min >= 0.0) || !(f_max >= 0.0)) throw invalid_argument("f_d band must be non-negative");
    if (!(phi_res > 0.0) || !(rho_range > 0.0) || !(rho_res > 0.0))
      throw invalid_argument("resolutions and ranges must be positive");
    const double cells = 2.0 * offset_bound() / df_bin;
    if (std::abs(cells - std::round(cells)) > 1e-9 * cells || std::round(cells) < 1.0)
      throw invalid_argument("df_bin must tile the offset range");
  }
};

struct SecrecyBudget {
  double cardinality_T = 0.0;
  double log2_T = 0.0;    // real-valued logs
  double log2_phi = 0.0;
  double log2_rho = 0.0;
  int N_f = 0;  // floors
  int N_phi = 0;
  int N_rho = 0;
  int N_total = 0;
  int N_total_rounded = 0;  // sum of the rounded logs

  double log2_total() const { return log2_T + log2_phi + log2_rho; }
};

namespace detail {

// P(|X - Y + k| in [lo, hi]) for X, Y ~ U(0, 1): the difference d = k + X - Y
// is triangular on (k - 1, k + 1).
inline double triangular_cdf(double x, double k) {
  const double z = x - k;
  if (z <= -1.0) return 0.0;
  if (z >= 1.0) return 1.0;
  if (z <= 0.0) return 0.5 * (1.0 + z) * (1.0 + z);
  return 1.0 - 0.5 * (1.0 - z) * (1.0 - z);
}

inline double band_fraction(double k, double lo, double hi) {
  if (hi < lo) return 0.0;
  const double pos = triangular_cdf(hi, k) - triangular_cdf(lo, k);
  const double neg = triangular_cdf(-lo, k) - triangular_cdf(-hi, k);
  // |d| = 0 is a single point when lo = 0; no double counting of measure.
  return pos + neg;
}

}  // namespace detail

// Admissible (df_A, df_B) cell pairs. Pairs with the same index difference
// share a fraction, so the enumeration runs over differences.
inline double count_valid_pairs(const BudgetInputs& in) {
  in.validate();
  if (in.f_min > in.f_max) return 0.0;
  const auto B = static_cast<std::int64_t>(in.bins());
  const double lo = in.f_min / in.df_bin;
  const double hi = in.f_max / in.df_bin;
  double total = 0.0;
  for (std::int64_t k = -(B - 1); k <= B - 1; ++k) {
    const double frac_in = detail::band_fraction(static_cast<double>(k), lo, hi);
    total += static_cast<double>(B - (k < 0 ? -k : k)) * frac_in;
  }
  return total;
}

// Closed form of the same area: (L - f_min)^2 - max(0, L - f_max)^2 in cells^2.
inline double two_triangle_area(const BudgetInputs& in) {
  in.validate();
  if (in.f_min > in.f_max) return 0.0;
  const double L = 2.0 * in.offset_bound() / in.df_bin;
  const double a = std::max(0.0, L - in.f_min / in.df_bin);
  const double b = std::max(0.0, L - in.f_max / in.df_bin);
  return a * a - b * b;
}

// Integer offsets in [-bound, bound] (both ends included) whose difference
// magnitude is inside [f_min, f_max]. A lattice reading of the same set.
inline std::uint64_t count_lattice_pairs(const BudgetInputs& in) {
  in.validate();
  if (in.f_min > in.f_max) return 0;
  const auto M = static_cast<std::int64_t>(std::llround(in.offset_bound() / in.df_bin));
  std::uint64_t n = 0;
  for (std::int64_t a = -M; a <= M; ++a)
    for (std::int64_t b = -M; b <= M; ++b) {
      const double d = std::abs(static_cast<double>(a - b)) * in.df_bin;
      if (d >= in.f_min && d <= in.f_max) ++n;
    }
  return n;
}

inline SecrecyBudget budget(const BudgetInputs& in) {
  in.validate();
  SecrecyBudget b;
  b.cardinality_T = count_valid_pairs(in);
  const auto bits = [](double count) { return count >= 1.0 ? std::log2(count) : 0.0; };
  b.log2_T = bits(b.cardinality_T);
  b.log2_phi = bits(kTwoPi / in.phi_res);
  b.log2_rho = bits(in.rho_range / in.rho_res);
  // A tiny tolerance keeps exact powers of two from flooring one short.
  const auto fl = [](double x) { return static_cast<int>(std::floor(x + 1e-12)); };
  b.N_f = fl(b.log2_T);
  b.N_phi = fl(b.log2_phi);
  b.N_rho = fl(b.log2_rho);
  b.N_total = b.N_f + b.N_phi + b.N_rho;
  b.N_total_rounded = static_cast<int>(std::lround(b.log2_T) + std::lround(b.log2_phi) +
                                       std::lround(b.log2_rho));
  return b;
}

// What one party holds after an exchange.
struct KeyMaterial {
  double f_A = 0.0;       // Hz, absolute
  double f_B = 0.0;       // Hz, absolute
  double phi_test = 0.0;  // rad
  double rho = 0.0;       // m
};

struct KeyPair {
  std::string alice;
  std::string bob;
  bool agree() const { return alice == bob; }
};

namespace detail {

inline void append_bits(std::string& s, std::uint64_t v, int n) {
  for (int b = n - 1; b >= 0; --b) s.push_back(((v >> b) & 1u) ? '1' : '0');
}

inline std::uint64_t quantize(double x, double lo, double width, std::uint64_t bins,
                              const char* what) {
  if (!std::isfinite(x)) throw range_error(std::string("non-finite ") + what);
  const double q = std::floor((x - lo) / width);
  if (q < 0.0 || q >= static_cast<double>(bins))
    throw range_error(std::string(what) + " outside its declared range");
  return static_cast<std::uint64_t>(q);
}

inline std::string key_bits(const KeyMaterial& m, const BudgetInputs& in, const SecrecyBudget& b) {
  const std::uint64_t B = in.bins();
  const double lo = in.f0 - in.offset_bound();
  const std::uint64_t iA = quantize(m.f_A, lo, in.df_bin, B, "f_A");
  const std::uint64_t iB = quantize(m.f_B, lo, in.df_bin, B, "f_B");
  std::string s;
  // Pair rank spread over 2^N_f codes, MSB first.
  const long double rank = static_cast<long double>(iA) * B + iB;
  const long double scale = std::ldexp(1.0L, b.N_f) / (static_cast<long double>(B) * B);
  append_bits(s, static_cast<std::uint64_t>(std::floor(rank * scale)), b.N_f);
  if (!(m.phi_test >= 0.0) || !(m.phi_test < kTwoPi)) throw range_error("phi_test outside [0, 2 pi)");
  append_bits(s, static_cast<std::uint64_t>(std::floor(m.phi_test / kTwoPi * std::ldexp(1.0, b.N_phi))),
              b.N_phi);
  if (!(m.rho >= 0.0) || !(m.rho < in.rho_range)) throw range_error("rho outside its declared range");
  append_bits(s, static_cast<std::uint64_t>(std::floor(m.rho / in.rho_range * std::ldexp(1.0, b.N_rho))),
              b.N_rho);
  return s;
}

}  // namespace detail

// Bin indices of (f_A, f_B, phi_test, rho) concatenated MSB first; N_f + N_phi
// + N_rho bits per side. No reconciliation: disagreement is reported as is.
inline KeyPair derive_key(const KeyMaterial& alice, const KeyMaterial& bob, const BudgetInputs& in) {
  const SecrecyBudget b = budget(in);
  return {detail::key_bits(alice, in, b), detail::key_bits(bob, in, b)};
}

}  // namespace climex
