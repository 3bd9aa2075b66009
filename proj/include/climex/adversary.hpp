#pragma once

// Eavesdropper channels, response injection and sawtooth-signature checks.
//
// Eve listens to both ends of every exchange. Her TDOA for ping i is the
// responder's delay plus r / c with r = rho_AB + rho_BE - rho_AE, the only
// combination of the three distances she can see. Her second channel times
// each ping's arrival against her own clock, a sawtooth at the emitter's
// offset from her. The defenders' side checks each measurement against the
// fitted sawtooth and flags the ones that do not belong.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "climex/errors.hpp"
#include "climex/estimators.hpp"
#include "climex/protocol_sim.hpp"
#include "climex/signal_model.hpp"

namespace climex {

struct EveEpoch {
  double timestamp = 0.0;     // t''', first ping arrival at Eve
  std::vector<double> times;  // nominal ping times relative to timestamp
  std::vector<double> tdoa;   // respond arrival minus ping arrival, s
  Geometry geometry;          // hidden truth, oracle checks only

  std::size_t size() const { return tdoa.size(); }
};

struct EveEstimate {
  double f_d_hat = 0.0;  // Hz
  double T_B_hat = 0.0;  // s
  double phi_hat = 0.0;  // rad
  double cost = 0.0;     // s^2
  bool at_grid_edge = false;
};

struct EveGrid {
  SearchGrid grid;
  double T_lo = 9.5e-9;   // s
  double T_hi = 10.5e-9;  // s
  double dT = 0.1e-9;     // s

  void validate() const {
    grid.validate();
    if (!(T_lo > 0.0) || !(T_hi > T_lo) || !(dT > 0.0))
      throw invalid_argument("period grid needs 0 < T_lo < T_hi and dT > 0");
  }
  double snap(double T) const {
    if (!std::isfinite(T)) return T_lo;
    const double n_max = std::floor((T_hi - T_lo) / dT + 1e-9);
    const double n = std::clamp(std::round((T - T_lo) / dT), 0.0, n_max);
    return T_lo + n * dT;
  }
};

namespace detail {

struct ExchangePair {
  const Signal* ping = nullptr;
  const Signal* respond = nullptr;  // genuine
  const Signal* injected = nullptr;
};

// Ping and genuine/injected responses of one epoch, by ping index.
inline std::vector<ExchangePair> pair_up(const ArrivalLog& log, NodeId initiator) {
  std::size_t n = 0;
  for (const Signal& s : log.signals)
    if (s.initiator == initiator && s.kind == SignalKind::ping) n = std::max(n, s.index + 1);
  std::vector<ExchangePair> out(n);
  for (const Signal& s : log.signals) {
    if (s.initiator != initiator || s.index >= n) continue;
    if (s.kind == SignalKind::ping)
      out[s.index].ping = &s;
    else if (s.injected)
      out[s.index].injected = &s;
    else
      out[s.index].respond = &s;
  }
  return out;
}

inline void require_eve(const ArrivalLog& log) {
  if (!log.has_eve) throw invalid_argument("log was recorded without an eavesdropper");
}

}  // namespace detail

// Eve's TDOA epoch. Evaluated as delay_i + r / c + n_E so that geometries
// sharing r give identical epochs; numerically the same as differencing the
// two logged arrivals.
inline EveEpoch eve_tdoa_epoch(const ArrivalLog& log, const NodeState& eve,
                               const NoiseParams& noise, const ProtocolConstants& consts,
                               std::uint64_t seed, NodeId initiator = NodeId::alice) {
  detail::require_eve(log);
  eve.clock.validate();
  noise.validate();
  const auto pairs = detail::pair_up(log, initiator);
  std::size_t heard = 0;
  for (const auto& p : pairs)
    if (p.ping && p.respond) ++heard;
  if (heard < consts.N || pairs.size() < consts.N)
    throw short_epoch("eavesdropper heard " + std::to_string(heard) + " of " +
                      std::to_string(consts.N) + " exchanges");

  const double sigma = std::sqrt(noise.sigma_c * noise.sigma_c + noise.sigma_j * noise.sigma_j);
  Rng rng = make_rng(seed, Stream::eve_noise);
  const double r = log.geometry.eve_constant() / log.c;

  EveEpoch ep;
  ep.geometry = log.geometry;
  ep.timestamp = pairs[0].ping->arrival[static_cast<std::size_t>(NodeId::eve)];
  ep.times = sample_times(consts.N, consts.T_m);
  ep.tdoa.resize(consts.N);
  for (std::size_t i = 0; i < consts.N; ++i)
    ep.tdoa[i] = pairs[i].respond->responder_delay + r + sigma * standard_normal(rng);
  return ep;
}

// Ping arrivals timed against Eve's own clock: wait to her next edge.
inline MeasurementEpoch eve_interarrival_epoch(const ArrivalLog& log, const NodeState& eve,
                                               const NoiseParams& noise,
                                               const ProtocolConstants& consts,
                                               std::uint64_t seed,
                                               NodeId initiator = NodeId::alice) {
  detail::require_eve(log);
  eve.clock.validate();
  noise.validate();
  const auto pairs = detail::pair_up(log, initiator);
  if (pairs.size() < consts.N)
    throw short_epoch("eavesdropper heard fewer pings than the epoch length");
  const double T = eve.clock.period();
  const double sigma = std::sqrt(noise.sigma_c * noise.sigma_c + noise.sigma_j * noise.sigma_j);
  Rng rng = make_rng(seed, Stream::eve_clock);

  MeasurementEpoch ep;
  ep.collector = NodeId::eve;
  ep.protocol = Protocol::rtt;
  ep.collector_frequency = eve.clock.frequency();
  ep.reference_period = T;
  ep.times = sample_times(consts.N, consts.T_m);
  ep.values.resize(consts.N);
  const auto k_eve = static_cast<std::size_t>(NodeId::eve);
  ep.timestamp = pairs[0].ping->arrival[k_eve];
  for (std::size_t i = 0; i < consts.N; ++i) {
    if (!pairs[i].ping) throw short_epoch("missing ping " + std::to_string(i));
    const double capture = pairs[i].ping->arrival[k_eve] - sigma * standard_normal(rng);
    double wait = eve.next_edge(capture) - capture;
    if (wait >= T) wait -= T;
    if (wait < 0.0) wait += T;
    ep.values[i] = wait;
  }
  return ep;
}

namespace detail {

// Minimizes || p - h(f_d, T_B, phi) ||^2 over the grid with p and h both
// de-meaned. T_B enters linearly, so it is profiled by least squares and then
// snapped to the period grid.
inline EveEstimate eve_search_ls(const EveEpoch& ep, const EveGrid& g) {
  const std::size_t n = ep.tdoa.size();
  if (n < 2 || ep.times.size() != n) throw invalid_argument("eavesdropper epoch is malformed");
  const SearchGrid& grid = g.grid;
  const double N = static_cast<double>(n);

  double mean = 0.0;
  for (double v : ep.tdoa) mean += v;
  mean /= N;
  std::vector<double> p(n);
  double Spp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = ep.tdoa[i] - mean;
    Spp += p[i] * p[i];
  }

  struct Best {
    double f = 0, phi = 0, T = 0, cost = std::numeric_limits<double>::infinity();
    std::size_t f_index = 0;
  };
  std::vector<double> cnt, sv, sp;
  const auto scan = [&](const std::vector<double>& fs, std::size_t K, Best& best) {
    const double Kd = static_cast<double>(K);
    for (std::size_t a = 0; a < fs.size(); ++a) {
      cnt.assign(K, 0.0);
      sv.assign(K, 0.0);
      sp.assign(K, 0.0);
      double Sv = 0.0, Svv = 0.0, Spv = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = frac(fs[a] * ep.times[i]);
        std::size_t b = static_cast<std::size_t>(v * Kd);
        if (b >= K) b = K - 1;
        cnt[b] += 1.0;
        sv[b] += v;
        sp[b] += p[i];
        Sv += v;
        Svv += v * v;
        Spv += p[i] * v;
      }
      double C = 0.0, SvI = 0.0, SpI = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        if (j > 0) {
          C += cnt[K - j];
          SvI += sv[K - j];
          SpI += sp[K - j];
        }
        const double s = static_cast<double>(j) / Kd;
        const double Su = Sv + N * s - C;
        const double Suu = Svv + 2.0 * s * Sv + N * s * s - 2.0 * SvI - 2.0 * s * C + C;
        const double Suu_c = Suu - Su * Su / N;
        const double Spu = Spv - SpI;  // sum of p is zero
        const double T = g.snap(Suu_c > 0.0 ? Spu / Suu_c : g.T_lo);
        const double cost = std::max(0.0, Spp - 2.0 * T * Spu + T * T * Suu_c);
        if (cost < best.cost) best = {fs[a], kTwoPi * s, T, cost, a};
      }
    }
  };

  const std::size_t nf = grid.f_count();
  const std::size_t K = grid.phi_count();
  if (std::abs(static_cast<double>(K) * grid.dphi - kTwoPi) > 1e-9 * kTwoPi)
    throw invalid_argument("phase step must divide 2 pi");
  std::vector<double> fs(nf);
  for (std::size_t j = 0; j < nf; ++j) fs[j] = grid.f_at(j);
  Best coarse;
  scan(fs, K, coarse);
  Best best = coarse;
  if (grid.refine > 1) {
    std::vector<double> fine;
    const double step = grid.df / grid.refine;
    for (int m = -grid.refine; m <= grid.refine; ++m) {
      const double f = coarse.f + m * step;
      if (f >= grid.f_lo - 1e-9 * grid.df && f <= grid.f_hi + 1e-9 * grid.df) fine.push_back(f);
    }
    Best refined;
    scan(fine, K * static_cast<std::size_t>(grid.refine), refined);
    if (refined.cost <= coarse.cost) best = refined;
  }

  EveEstimate est;
  est.f_d_hat = best.f;
  est.T_B_hat = best.T;
  est.phi_hat = wrap_phase(best.phi);
  est.cost = best.cost;
  est.at_grid_edge = coarse.f_index == 0 || coarse.f_index + 1 == nf;
  return est;
}


inline double eve_wrapped_cost(const EveEpoch& ep, double f_d, double T_B, double phi) {
  const std::size_t n = ep.tdoa.size();
  const double cycles = phi / kTwoPi;
  std::vector<double> r(n);
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = ep.tdoa[i] - T_B * frac(f_d * ep.times[i] + cycles);
    m += r[i];
  }
  m /= static_cast<double>(n);
  double J = 0.0;
  for (double v : r) {
    const double d = nearest_branch(v - m, T_B);
    J += d * d;
  }
  return J;
}

// Circular periodogram of the TDOA phasors exp(2 pi i p / T) for f_d, then
// (T_B, phi) on nearest-branch residuals.
inline EveEstimate eve_search_wrapped(const EveEpoch& ep, const EveGrid& g) {
  const SearchGrid& grid = g.grid;
  const std::size_t n = ep.tdoa.size();
  const std::size_t nf = grid.f_count();
  std::vector<double> fs(nf);
  for (std::size_t j = 0; j < nf; ++j) fs[j] = grid.f_at(j);

  MeasurementEpoch as_epoch;
  as_epoch.protocol = Protocol::rtt;
  as_epoch.times = ep.times;
  as_epoch.values = ep.tdoa;
  ProtocolConstants unit;
  unit.N = n;

  // f_d from the periodogram at the centre period: the peak frequency does
  // not depend on the period, and the peak height favours large periods
  // under noise, so the period is chosen on residuals instead.
  as_epoch.reference_period = 0.5 * (g.T_lo + g.T_hi);
  const std::vector<double> coarse = periodogram(as_epoch, unit, {}, fs, 0.0, CostRoute::fast);
  const std::size_t best_fi = periodogram_peak(coarse);
  double f_best = fs[best_fi];
  if (grid.refine > 1) {
    const std::vector<double> fine = fine_band(grid, f_best, grid.df, grid.df / grid.refine);
    const std::vector<double> p = periodogram(as_epoch, unit, {}, fine, 0.0, CostRoute::fast);
    f_best = fine[periodogram_peak(p)];
  }

  const std::size_t nT =
      static_cast<std::size_t>(std::floor((g.T_hi - g.T_lo) / g.dT + 1e-9)) + 1;
  const std::size_t K = grid.phi_count() * static_cast<std::size_t>(grid.refine);
  double phi_best = 0.0, best_T = g.T_lo, cost = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < nT; ++k) {
    const double T = g.T_lo + static_cast<double>(k) * g.dT;
    for (std::size_t j = 0; j < K; ++j) {
      const double phi = kTwoPi * static_cast<double>(j) / static_cast<double>(K);
      const double c = eve_wrapped_cost(ep, f_best, T, phi);
      if (c < cost) {
        cost = c;
        phi_best = phi;
        best_T = T;
      }
    }
  }

  EveEstimate est;
  est.f_d_hat = f_best;
  est.T_B_hat = best_T;
  est.phi_hat = wrap_phase(phi_best);
  est.cost = cost;
  est.at_grid_edge = best_fi == 0 || best_fi + 1 == nf;
  return est;
}

}  // namespace detail

inline EveEstimate eve_estimate_rtt(const EveEpoch& ep, const EveGrid& g) {
  g.validate();
  if (ep.tdoa.size() < 2 || ep.times.size() != ep.tdoa.size())
    throw invalid_argument("eavesdropper epoch is malformed");
  return g.grid.objective == Objective::least_squares ? detail::eve_search_ls(ep, g)
                                                      : detail::eve_search_wrapped(ep, g);
}

// Profiled cost of one Eve hypothesis, literal evaluation.
inline double eve_cost(const EveEpoch& ep, double f_d, double T_B, double phi) {
  const std::size_t n = ep.tdoa.size();
  SawtoothArgs args{f_d, T_B, wrap_phase(phi), ep.times, {}, {}};
  const std::vector<double> h = sawtooth_h(args);
  double mp = 0.0, mh = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += ep.tdoa[i];
    mh += h[i];
  }
  mp /= static_cast<double>(n);
  mh /= static_cast<double>(n);
  double J = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (ep.tdoa[i] - mp) - (h[i] - mh);
    J += d * d;
  }
  return J;
}

// ---------------------------------------------------------------------------
// Injection.

struct InjectionPlan {
  enum class Strategy { random_timing, oracle_perfect };
  Strategy strategy = Strategy::random_timing;
  NodeId victim = NodeId::alice;  // initiator whose responses are replaced
  // (ping index, emission offset after the ping reaches Eve)
  std::vector<std::pair<std::size_t, double>> entries;

  void validate() const {
    for (const auto& e : entries)
      if (!std::isfinite(e.second)) throw invalid_argument("injection offsets must be finite");
  }
};

inline const char* to_string(InjectionPlan::Strategy s) {
  return s == InjectionPlan::Strategy::random_timing ? "random-timing" : "oracle-perfect";
}

// Offsets drawn U(0, T_m / 2): a guess at when the genuine response leaves.
inline InjectionPlan plan_random_timing(const ProtocolConstants& consts,
                                        std::span<const std::size_t> indices, std::uint64_t seed,
                                        NodeId victim = NodeId::alice) {
  InjectionPlan plan;
  plan.strategy = InjectionPlan::Strategy::random_timing;
  plan.victim = victim;
  Rng rng = make_rng(seed, Stream::injection);
  std::uniform_real_distribution<double> u(0.0, consts.T_m / 2.0);
  for (std::size_t i : indices) plan.entries.emplace_back(i, u(rng));
  return plan;
}

// Reads the hidden truth to land each injected response where the genuine one
// arrives at the victim.
inline InjectionPlan plan_oracle_perfect(const ArrivalLog& log, std::span<const std::size_t> indices,
                                         NodeId victim = NodeId::alice) {
  detail::require_eve(log);
  const auto pairs = detail::pair_up(log, victim);
  const auto k_eve = static_cast<std::size_t>(NodeId::eve);
  const auto k_vic = static_cast<std::size_t>(victim);
  const double back = log.geometry.between(NodeId::eve, victim) / log.c;
  InjectionPlan plan;
  plan.strategy = InjectionPlan::Strategy::oracle_perfect;
  plan.victim = victim;
  for (std::size_t i : indices) {
    if (i >= pairs.size() || !pairs[i].ping || !pairs[i].respond)
      throw invalid_argument("no exchange at index " + std::to_string(i));
    const double target = pairs[i].respond->arrival[k_vic];
    plan.entries.emplace_back(i, target - back - pairs[i].ping->arrival[k_eve]);
  }
  return plan;
}

// Log plus one Eve-emitted Respond per plan entry.
inline ArrivalLog inject_responses(const ArrivalLog& log, const InjectionPlan& plan,
                                   const NodeState& eve) {
  plan.validate();
  if (plan.entries.empty()) return log;
  detail::require_eve(log);
  (void)eve;
  const auto pairs = detail::pair_up(log, plan.victim);
  const auto k_eve = static_cast<std::size_t>(NodeId::eve);
  ArrivalLog out = log;
  for (const auto& [i, offset] : plan.entries) {
    if (i >= pairs.size() || !pairs[i].ping)
      throw invalid_argument("no ping at index " + std::to_string(i));
    Signal s;
    s.index = i;
    s.initiator = plan.victim;
    s.emitter = NodeId::eve;
    s.kind = SignalKind::respond;
    s.injected = true;
    s.emit_time = pairs[i].ping->arrival[k_eve] + offset;
    for (NodeId id : {NodeId::alice, NodeId::bob, NodeId::eve})
      s.arrival[static_cast<std::size_t>(id)] =
          s.emit_time + log.geometry.between(NodeId::eve, id) / log.c;
    out.signals.push_back(s);
  }
  return out;
}

// The victim's epoch as measured when injected responses win the race: each
// affected value moves by the injected-minus-genuine arrival difference, the
// timestamp noise of the original measurement is kept.
inline MeasurementEpoch remeasure(const MeasurementEpoch& epoch, const ArrivalLog& log) {
  MeasurementEpoch out = epoch;
  const auto pairs = detail::pair_up(log, epoch.collector);
  const auto k = static_cast<std::size_t>(epoch.collector);
  for (std::size_t i = 0; i < pairs.size() && i < out.values.size(); ++i) {
    if (!pairs[i].injected || !pairs[i].respond) continue;
    out.values[i] += pairs[i].injected->arrival[k] - pairs[i].respond->arrival[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Outlier detection.

inline double median(std::vector<double> v) {
  if (v.empty()) throw invalid_argument("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lo);
  }
  return m;
}

// Residuals against the fitted model, each moved by at most one sawtooth
// height toward zero so samples that noise pushed across a wrap still fit.
inline std::vector<double> signature_residuals(const MeasurementEpoch& ep, const ParamEstimate& est,
                                               const ProtocolConstants& consts,
                                               std::span<const double> known_delta = {}) {
  if (ep.protocol == Protocol::climex && known_delta.empty()) known_delta = ep.delta;
  std::vector<double> r =
      detail::residual_before_rho(ep, est.f_d_hat, est.phi_hat, consts, known_delta);
  const double T_r = detail::responder_period(ep, est.f_d_hat);
  const double amp = detail::model_amplitude(ep, consts, T_r);
  const double offset = 2.0 * est.rho_hat / consts.c;
  for (double& v : r) {
    v -= offset;
    double best = v;
    if (std::abs(v - amp) < std::abs(best)) best = v - amp;
    if (std::abs(v + amp) < std::abs(best)) best = v + amp;
    v = best;
  }
  return r;
}

// 1.4826 * median absolute deviation about the median.
inline double mad_scale(const std::vector<double>& r) {
  const double m = median(r);
  std::vector<double> dev(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) dev[i] = std::abs(r[i] - m);
  return 1.4826 * median(std::move(dev));
}

// Fit, drop the largest 5% of |residuals|, fit again on the rest.
inline ParamEstimate robust_fit(const MeasurementEpoch& ep, const SearchGrid& grid,
                                const ProtocolConstants& consts,
                                std::span<const double> known_delta = {}, double trim = 0.05) {
  if (ep.protocol == Protocol::climex && known_delta.empty()) known_delta = ep.delta;
  const ParamEstimate first = grid_search(ep, grid, consts, known_delta);
  const std::vector<double> r = signature_residuals(ep, first, consts, known_delta);
  const std::size_t n = r.size();
  const auto drop = static_cast<std::size_t>(std::floor(trim * static_cast<double>(n)));
  if (drop == 0 || n - drop < 2) return first;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(r[a]) < std::abs(r[b]); });
  order.resize(n - drop);
  std::sort(order.begin(), order.end());

  MeasurementEpoch sub = ep;
  sub.times.clear();
  sub.values.clear();
  sub.delta.clear();
  std::vector<double> sub_delta;
  for (std::size_t i : order) {
    sub.times.push_back(ep.times[i]);
    sub.values.push_back(ep.values[i]);
    if (!known_delta.empty()) sub_delta.push_back(known_delta[i]);
  }
  sub.delta = sub_delta;
  ParamEstimate second = grid_search(sub, grid, consts, sub_delta);
  second.cost = cost_J(ep, second.f_d_hat, second.phi_hat, second.rho_hat, consts, known_delta);
  return second;
}

// Indices whose residual exceeds k_sigma robust standard deviations.
inline std::vector<std::size_t> detect_outliers(const MeasurementEpoch& ep,
                                                const ParamEstimate& est,
                                                const ProtocolConstants& consts,
                                                std::span<const double> known_delta,
                                                double k_sigma) {
  if (!(k_sigma > 0.0)) throw invalid_argument("k_sigma must be positive");
  const std::vector<double> r = signature_residuals(ep, est, consts, known_delta);
  const double sigma = mad_scale(r);
  std::vector<std::size_t> flagged;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (std::abs(r[i]) > k_sigma * sigma) flagged.push_back(i);
  return flagged;
}

}  // namespace climex
