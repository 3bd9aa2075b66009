#pragma once

// Least-squares recovery of (f_d, phi', rho) from a collector's epoch.
//
// The model for sample i is
//   y_i = amp * frac(f_d t_i + phi / 2 pi + Delta_i / T_r) + delta_0 + 2 rho / c
// with T_r the responder period implied by the hypothesis (the collector knows
// its own frequency, so T_r = 1 / (f_own - f_d)) and amp = A under CLIMEX or
// T_r under RTT. rho enters linearly, so for each (f_d, phi) it is profiled
// out as the mean residual and the cost is the residual sum of squares about
// that mean.
//
// For fixed f_d the cost over a full circle of phi = 2 pi j / K can be had in
// O(N + K): bucket v_i = frac(f_d t_i + Delta_i / T_r) by floor(K v_i); a shift
// by s = j / K wraps exactly the samples in buckets b >= K - j, so every sum
// the cost needs follows from per-bucket partial sums.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "climex/errors.hpp"
#include "climex/protocol_sim.hpp"
#include "climex/signal_model.hpp"

namespace climex {

// least_squares: the plain residual sum of squares, rho at the mean residual.
// wrapped: the same residuals, each taken on its nearest sawtooth branch, so a
// sample that noise carried across a wrap costs its small offset instead of
// a full amplitude.
enum class Objective { wrapped, least_squares };

struct SearchGrid {
  double f_lo = -1000.0;  // Hz
  double f_hi = 1000.0;   // Hz
  double df = 1.0;        // Hz
  double dphi = kTwoPi / 64.0;
  int refine = 10;  // 1 disables the second pass
  Objective objective = Objective::wrapped;

  void validate() const {
    if (!std::isfinite(f_lo) || !std::isfinite(f_hi) || !(f_lo < f_hi))
      throw invalid_argument("grid needs f_lo < f_hi");
    if (!(df > 0.0) || !(dphi > 0.0)) throw invalid_argument("grid steps must be positive");
    if (dphi > kTwoPi) throw invalid_argument("phase step exceeds 2 pi");
    if (refine < 1) throw invalid_argument("refine factor must be >= 1");
  }

  std::size_t f_count() const {
    return static_cast<std::size_t>(std::floor((f_hi - f_lo) / df + 1e-9)) + 1;
  }
  std::size_t phi_count() const {
    return static_cast<std::size_t>(std::ceil(kTwoPi / dphi - 1e-9));
  }
  double f_at(std::size_t j) const { return f_lo + static_cast<double>(j) * df; }
};

enum class CostRoute { fast, direct };

struct ParamEstimate {
  double f_d_hat = 0.0;    // collector minus responder, Hz
  double phi_hat = 0.0;    // rad
  double rho_hat = 0.0;    // m
  double cost = 0.0;       // s^2
  double f_counterpart_hat = 0.0;  // Hz, responder frequency
  double timestamp = 0.0;  // s, epoch start
  NodeId collector = NodeId::alice;
  bool at_grid_edge = false;  // coarse minimum on the f_d boundary
  std::size_t f_index = 0;    // coarse grid indices of the minimum
  std::size_t phi_index = 0;
};

namespace detail {

inline double responder_period(const MeasurementEpoch& ep, double f_d) {
  if (ep.reference_period) return *ep.reference_period;
  if (!(ep.collector_frequency > 0.0))
    throw invalid_argument("epoch does not carry the collector's frequency");
  const double f = ep.collector_frequency - f_d;
  if (!(f > 0.0)) throw invalid_argument("hypothesised responder frequency is not positive");
  return 1.0 / f;
}

inline double model_amplitude(const MeasurementEpoch& ep, const ProtocolConstants& consts,
                              double T_r) {
  return ep.protocol == Protocol::climex ? consts.A_scale : T_r;
}

inline void check_epoch(const MeasurementEpoch& ep, std::span<const double> known_delta) {
  if (ep.times.size() != ep.values.size())
    throw invalid_argument("epoch times and values differ in length");
  if (ep.values.empty()) throw invalid_argument("empty epoch");
  if (!known_delta.empty() && known_delta.size() != ep.values.size())
    throw invalid_argument("known_delta length differs from epoch length");
}

// y - model(f_d, phi) - delta_0, literal evaluation through the sawtooth functions.
inline std::vector<double> residual_before_rho(const MeasurementEpoch& ep, double f_d, double phi,
                                               const ProtocolConstants& consts,
                                               std::span<const double> known_delta) {
  check_epoch(ep, known_delta);
  const double T_r = responder_period(ep, f_d);
  SawtoothArgs args{f_d, T_r, wrap_phase(phi), ep.times, {}, {}};
  std::vector<double> model;
  if (ep.protocol == Protocol::climex) {
    args.delta = known_delta;
    model = sawtooth_g(args, consts.A_scale);
  } else {
    model = sawtooth_h(args);
  }
  for (std::size_t i = 0; i < model.size(); ++i) model[i] = ep.values[i] - model[i] - consts.delta_0;
  return model;
}

}  // namespace detail

inline double cost_J(const MeasurementEpoch& ep, double f_d, double phi, double rho,
                     const ProtocolConstants& consts, std::span<const double> known_delta = {}) {
  const std::vector<double> r = detail::residual_before_rho(ep, f_d, phi, consts, known_delta);
  const double offset = 2.0 * rho / consts.c;
  double J = 0.0;
  for (double v : r) J += (v - offset) * (v - offset);
  return J;
}

inline double estimate_rho(const MeasurementEpoch& ep, double f_d, double phi,
                           const ProtocolConstants& consts,
                           std::span<const double> known_delta = {}) {
  const std::vector<double> r = detail::residual_before_rho(ep, f_d, phi, consts, known_delta);
  double sum = 0.0;
  for (double v : r) sum += v;
  return consts.c / 2.0 * (sum / static_cast<double>(r.size()));
}

namespace detail {

// Profiled cost of every phase j * 2 pi / K for one f_d, O(N + K).
class PhaseSweep {
 public:
  PhaseSweep(const MeasurementEpoch& ep, const ProtocolConstants& consts,
             std::span<const double> known_delta)
      : ep_(ep), consts_(consts), delta_(known_delta) {
    const std::size_t n = ep.values.size();
    double mean = 0.0;
    for (double y : ep.values) mean += y;
    mean /= static_cast<double>(n);
    e_.resize(n);
    for (std::size_t i = 0; i < n; ++i) e_[i] = ep.values[i] - mean;
  }

  // cost[j] for j < K, written into out; returns nothing else.
  void run(double f_d, std::size_t K, std::vector<double>& out) {
    const std::size_t n = e_.size();
    const double T_r = responder_period(ep_, f_d);
    const double amp = model_amplitude(ep_, consts_, T_r);
    const bool use_delta = ep_.protocol == Protocol::climex && !delta_.empty();
    cnt_.assign(K, 0.0);
    sv_.assign(K, 0.0);
    se_.assign(K, 0.0);
    double Sv = 0.0, Svv = 0.0, Sev = 0.0, Se = 0.0, See = 0.0;
    const double Kd = static_cast<double>(K);
    for (std::size_t i = 0; i < n; ++i) {
      double x = f_d * ep_.times[i];
      if (use_delta) x += delta_[i] / T_r;
      const double v = frac(x);
      std::size_t b = static_cast<std::size_t>(v * Kd);
      if (b >= K) b = K - 1;
      const double e = e_[i];
      cnt_[b] += 1.0;
      sv_[b] += v;
      se_[b] += e;
      Sv += v;
      Svv += v * v;
      Sev += e * v;
      Se += e;
      See += e * e;
    }
    const double N = static_cast<double>(n);
    out.resize(K);
    double C = 0.0, SvI = 0.0, SeI = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      if (j > 0) {
        const std::size_t b = K - j;
        C += cnt_[b];
        SvI += sv_[b];
        SeI += se_[b];
      }
      const double s = static_cast<double>(j) / Kd;
      const double Su = Sv + N * s - C;
      const double Suu = Svv + 2.0 * s * Sv + N * s * s - 2.0 * SvI - 2.0 * s * C + C;
      const double Seu = Sev + s * Se - SeI;
      const double Sr = Se - amp * Su;
      const double Srr = See - 2.0 * amp * Seu + amp * amp * Suu;
      out[j] = std::max(0.0, Srr - Sr * Sr / N);
    }
  }

 private:
  const MeasurementEpoch& ep_;
  const ProtocolConstants& consts_;
  std::span<const double> delta_;
  std::vector<double> e_;
  std::vector<double> cnt_, sv_, se_;
};

inline double profiled_cost_direct(const MeasurementEpoch& ep, double f_d, double phi,
                                   const ProtocolConstants& consts,
                                   std::span<const double> known_delta) {
  const std::vector<double> r = residual_before_rho(ep, f_d, phi, consts, known_delta);
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(r.size());
  double J = 0.0;
  for (double v : r) J += (v - mean) * (v - mean);
  return J;
}

struct GridBest {
  double f = 0.0;
  double phi = 0.0;
  double cost = std::numeric_limits<double>::infinity();
  std::size_t f_index = 0;
  std::size_t phi_index = 0;
};

// Minimum over fs x {j * 2 pi / K}. Strict improvement only, so ties keep the
// smallest f, then the smallest phi.
inline GridBest scan(const MeasurementEpoch& ep, const ProtocolConstants& consts,
                     std::span<const double> known_delta, const std::vector<double>& fs,
                     std::size_t K, double dphi, CostRoute route) {
  const double K_phi = static_cast<double>(K) * dphi;
  const bool exact_circle = std::abs(K_phi - kTwoPi) <= 1e-9 * kTwoPi;
  GridBest best;
  if (route == CostRoute::fast && exact_circle) {
    PhaseSweep sweep(ep, consts, known_delta);
    std::vector<double> costs;
    for (std::size_t a = 0; a < fs.size(); ++a) {
      sweep.run(fs[a], K, costs);
      for (std::size_t j = 0; j < K; ++j) {
        if (costs[j] < best.cost) {
          best = {fs[a], kTwoPi * static_cast<double>(j) / static_cast<double>(K), costs[j], a, j};
        }
      }
    }
    return best;
  }
  for (std::size_t a = 0; a < fs.size(); ++a) {
    for (std::size_t j = 0; j < K; ++j) {
      const double phi = exact_circle ? kTwoPi * static_cast<double>(j) / static_cast<double>(K)
                                      : static_cast<double>(j) * dphi;
      const double c = profiled_cost_direct(ep, fs[a], phi, consts, known_delta);
      if (c < best.cost) best = {fs[a], phi, c, a, j};
    }
  }
  return best;
}

inline double nearest_branch(double d, double amp) {
  if (std::abs(d - amp) < std::abs(d)) return d - amp;
  if (std::abs(d + amp) < std::abs(d)) return d + amp;
  return d;
}

// Sum of squared residuals about the mean-residual offset, each residual
// moved to its nearest sawtooth branch (r, r - amp, r + amp).
inline double wrapped_cost(const MeasurementEpoch& ep, double f_d, double phi,
                           const ProtocolConstants& consts, std::span<const double> known_delta) {
  const double T_r = responder_period(ep, f_d);
  const double amp = model_amplitude(ep, consts, T_r);
  const bool use_delta = ep.protocol == Protocol::climex && !known_delta.empty();
  const double cycles = phi / kTwoPi;
  const std::size_t n = ep.values.size();
  std::vector<double> r(n);
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double x = f_d * ep.times[i] + cycles;
    if (use_delta) x += known_delta[i] / T_r;
    r[i] = ep.values[i] - consts.delta_0 - amp * frac(x);
    m += r[i];
  }
  m /= static_cast<double>(n);
  double J = 0.0;
  for (double v : r) {
    const double d = nearest_branch(v - m, amp);
    J += d * d;
  }
  return J;
}

// Circular periodogram: each value becomes a unit phasor at angle
// 2 pi y / amp, where noise across a wrap is a small rotation rather than a
// jump of amp. Returns |sum_i exp(2 pi i (y_i / amp - f t_i - Delta_i / T))|^2
// per f. amp and T are taken at the grid-centre hypothesis; across the f_d
// range they move by parts per million.
inline std::vector<double> periodogram(const MeasurementEpoch& ep, const ProtocolConstants& consts,
                                       std::span<const double> known_delta,
                                       const std::vector<double>& fs, double f_ref,
                                       CostRoute route) {
  const std::size_t n = ep.values.size();
  const double T_ref = responder_period(ep, f_ref);
  const double amp = model_amplitude(ep, consts, T_ref);
  const bool use_delta = ep.protocol == Protocol::climex && !known_delta.empty();
  double ybar = 0.0;
  for (double y : ep.values) ybar += y;
  ybar /= static_cast<double>(n);
  std::vector<double> zr(n), zi(n);
  for (std::size_t i = 0; i < n; ++i) {
    double cyc = frac((ep.values[i] - ybar) / amp);
    if (use_delta) cyc -= frac(known_delta[i] / T_ref);
    zr[i] = std::cos(kTwoPi * cyc);
    zi[i] = std::sin(kTwoPi * cyc);
  }

  // Uniform sample times allow a rotating-phasor recurrence.
  bool uniform = route == CostRoute::fast && n >= 2;
  const double tau = n >= 2 ? ep.times[1] - ep.times[0] : 0.0;
  for (std::size_t i = 0; uniform && i < n; ++i)
    uniform = std::abs(ep.times[i] - (ep.times[0] + static_cast<double>(i) * tau)) <=
              1e-9 * std::abs(tau);

  std::vector<double> out(fs.size());
  for (std::size_t a = 0; a < fs.size(); ++a) {
    const double f = fs[a];
    double sr = 0.0, si = 0.0;
    if (uniform) {
      const double c0 = kTwoPi * frac(f * ep.times[0]);
      double pr = std::cos(c0), pi = -std::sin(c0);
      const double step = kTwoPi * frac(f * tau);
      const double qr = std::cos(step), qi = -std::sin(step);
      for (std::size_t i = 0; i < n; ++i) {
        sr += zr[i] * pr - zi[i] * pi;
        si += zr[i] * pi + zi[i] * pr;
        const double t = pr * qr - pi * qi;
        pi = pr * qi + pi * qr;
        pr = t;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const double c = kTwoPi * frac(f * ep.times[i]);
        const double pr = std::cos(c), pi = -std::sin(c);
        sr += zr[i] * pr - zi[i] * pi;
        si += zr[i] * pi + zi[i] * pr;
      }
    }
    out[a] = sr * sr + si * si;
  }
  return out;
}

// Largest periodogram value; ties keep the smallest f.
inline std::size_t periodogram_peak(const std::vector<double>& p) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < p.size(); ++a)
    if (p[a] > p[best]) best = a;
  return best;
}

inline std::vector<double> fine_band(const SearchGrid& grid, double centre, double half,
                                     double step) {
  std::vector<double> fs;
  const int m = static_cast<int>(std::llround(half / step));
  for (int k = -m; k <= m; ++k) {
    const double f = centre + k * step;
    if (f < grid.f_lo - 1e-9 * grid.df || f > grid.f_hi + 1e-9 * grid.df) continue;
    fs.push_back(f);
  }
  return fs;
}

// f_d from the periodogram, then phi over the full circle, then a local
// search in (f_d, psi) with psi the phase at the mean sample time, the
// combination the data pins down best.
inline GridBest wrapped_search(const MeasurementEpoch& ep, const SearchGrid& grid,
                               const ProtocolConstants& consts,
                               std::span<const double> known_delta, const std::vector<double>& fs,
                               CostRoute route) {
  const double f_ref = 0.5 * (grid.f_lo + grid.f_hi);
  const std::vector<double> coarse_p = periodogram(ep, consts, known_delta, fs, f_ref, route);
  const std::size_t ci = periodogram_peak(coarse_p);
  GridBest best;
  best.f_index = ci;
  best.f = fs[ci];
  if (grid.refine > 1) {
    const std::vector<double> fine = fine_band(grid, fs[ci], grid.df, grid.df / grid.refine);
    const std::vector<double> p = periodogram(ep, consts, known_delta, fine, f_ref, route);
    best.f = fine[periodogram_peak(p)];
  }

  const std::size_t K = grid.phi_count() * static_cast<std::size_t>(grid.refine);
  const double dphi = kTwoPi / static_cast<double>(K);
  for (std::size_t j = 0; j < K; ++j) {
    const double phi = static_cast<double>(j) * dphi;
    const double c = wrapped_cost(ep, best.f, phi, consts, known_delta);
    if (c < best.cost) {
      best.phi = phi;
      best.cost = c;
    }
  }

  double t_bar = 0.0;
  for (double t : ep.times) t_bar += t;
  t_bar /= static_cast<double>(ep.times.size());
  const double f0 = best.f;
  const double psi0 = best.phi + kTwoPi * f0 * t_bar;
  const double df = grid.df / grid.refine / 10.0;
  for (int i = -10; i <= 10; ++i) {
    const double f = f0 + i * df;
    if (f < grid.f_lo || f > grid.f_hi) continue;
    for (int j = -10; j <= 10; ++j) {
      const double phi = wrap_phase(psi0 + j * dphi / 10.0 - kTwoPi * f * t_bar);
      const double c = wrapped_cost(ep, f, phi, consts, known_delta);
      if (c < best.cost) {
        best.f = f;
        best.phi = phi;
        best.cost = c;
      }
    }
  }
  best.phi_index =
      static_cast<std::size_t>(std::llround(best.phi / grid.dphi)) % grid.phi_count();
  return best;
}

}  // namespace detail

// Sum of squared nearest-branch residuals at the mean-residual offset.
inline double cost_J_wrapped(const MeasurementEpoch& ep, double f_d, double phi,
                             const ProtocolConstants& consts,
                             std::span<const double> known_delta = {}) {
  detail::check_epoch(ep, known_delta);
  return detail::wrapped_cost(ep, f_d, wrap_phase(phi), consts, known_delta);
}

// Responder frequency from the collector's own one.
enum class Role { initiator, responder };

// f_d_hat in the Alice-minus-Bob convention. The initiator (Alice) gets
// f_B = f_A - f_d; the responder (Bob) gets f_A = f_B + f_d. A collector's own
// ParamEstimate is collector-minus-responder, so Bob negates it first.
inline double counterpart_frequency(double f_d_hat, double own_f, Role role) {
  return role == Role::initiator ? own_f - f_d_hat : own_f + f_d_hat;
}

inline ParamEstimate grid_search(const MeasurementEpoch& ep, const SearchGrid& grid,
                                 const ProtocolConstants& consts,
                                 std::span<const double> known_delta = {},
                                 CostRoute route = CostRoute::fast) {
  grid.validate();
  consts.validate();
  detail::check_epoch(ep, known_delta);
  if (ep.protocol == Protocol::climex && known_delta.empty() && !ep.delta.empty())
    known_delta = ep.delta;

  const std::size_t nf = grid.f_count();
  const std::size_t K = grid.phi_count();
  if (nf == 0 || K == 0) throw invalid_argument("empty search grid");
  std::vector<double> fs(nf);
  for (std::size_t j = 0; j < nf; ++j) fs[j] = grid.f_at(j);

  detail::GridBest coarse, best;
  if (grid.objective == Objective::least_squares) {
    coarse = detail::scan(ep, consts, known_delta, fs, K, grid.dphi, route);
    best = coarse;
    if (grid.refine > 1) {
      const std::vector<double> fine =
          detail::fine_band(grid, coarse.f, grid.df, grid.df / grid.refine);
      // Full circle at the finer phase step: the phase of a nearby f_d can
      // sit far from the coarse phase, since phi trades off against f_d * t.
      best = detail::scan(ep, consts, known_delta, fine,
                          K * static_cast<std::size_t>(grid.refine), grid.dphi / grid.refine,
                          route);
      if (!(best.cost <= coarse.cost)) best = coarse;
    }
  } else {
    best = detail::wrapped_search(ep, grid, consts, known_delta, fs, route);
    coarse = best;
  }

  ParamEstimate est;
  est.f_d_hat = best.f;
  est.phi_hat = wrap_phase(best.phi);
  est.rho_hat = estimate_rho(ep, est.f_d_hat, est.phi_hat, consts, known_delta);
  est.cost = cost_J(ep, est.f_d_hat, est.phi_hat, est.rho_hat, consts, known_delta);
  est.timestamp = ep.timestamp;
  est.collector = ep.collector;
  est.f_index = coarse.f_index;
  est.phi_index = coarse.phi_index;
  est.at_grid_edge = coarse.f_index == 0 || coarse.f_index + 1 == nf;
  // Edge-referenced epochs beat at emitter minus collector.
  if (ep.reference_period)
    est.f_counterpart_hat = ep.collector_frequency + est.f_d_hat;
  else if (ep.collector_frequency > 0.0)
    est.f_counterpart_hat = counterpart_frequency(est.f_d_hat, ep.collector_frequency,
                                                  Role::initiator);
  return est;
}

// Phase of the responder's clock at t_test, predicted by the collector:
// X = t' + rho/c + phi' / (2 pi f_r) is a responder edge, edges repeat every
// 1 / f_r, and the phase counts the fraction of a period left to the next one.
inline double predict_phi_test(const ParamEstimate& est, double own_f, double t_test,
                               double c = kSpeedOfLight) {
  if (!std::isfinite(t_test) || t_test < est.timestamp)
    throw invalid_argument("t_test precedes the epoch");
  const double f_r = own_f - est.f_d_hat;
  if (!(f_r > 0.0)) throw domain_error("estimated responder frequency is not positive");
  const double T_r = 1.0 / f_r;
  const double X = est.timestamp + est.rho_hat / c + est.phi_hat / (kTwoPi * f_r);
  return wrap_phase(kTwoPi - kTwoPi * f_r * pmod(t_test - X, T_r));
}

// Local reading of a node's own clock: 2 pi f times the wait to the next edge.
inline double measure_phi_test_local(const NodeState& node, double t_test) {
  if (!std::isfinite(t_test)) throw invalid_argument("non-finite t_test");
  return wrap_phase(kTwoPi * node.clock.frequency() * (node.next_edge(t_test) - t_test));
}

}  // namespace climex
