#pragma once

// Closed-form measurement models for clocked ping/respond exchanges.
//
// Two free-running clocks beating at the difference frequency f_d produce a
// sawtooth in the responder's edge-synchronization delay. All times are
// double-precision seconds. The epoch phase phi is the phase of the sawtooth
// at the first sample (t = 0 relative to the epoch timestamp t'); sample times
// passed to the models are relative to t'. An absolute-time caller can fold
// 2*pi*f_d*t' into phi, the two conventions differ only by that constant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "climex/errors.hpp"

namespace climex {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kSpeedOfLight = 299'792'458.0;

// Mathematical modulus, always in [0, m) for m > 0.
inline double pmod(double x, double m) {
  double r = std::fmod(x, m);
  if (r < 0.0) r += m;
  if (r >= m) r = 0.0;
  return r;
}

// Fractional part in [0, 1).
inline double frac(double x) {
  double r = x - std::floor(x);
  return r >= 1.0 ? 0.0 : r;
}

inline double wrap_phase(double phi) { return pmod(phi, kTwoPi); }

enum class NodeId { alice = 0, bob = 1, eve = 2 };
enum class Protocol { rtt, climex };

inline const char* to_string(NodeId id) {
  switch (id) {
    case NodeId::alice: return "alice";
    case NodeId::bob: return "bob";
    case NodeId::eve: return "eve";
  }
  return "?";
}

inline const char* to_string(Protocol p) { return p == Protocol::rtt ? "rtt" : "climex"; }

struct ClockParams {
  double f_nominal = 100e6;  // Hz
  double delta_f = 0.0;      // Hz, offset from nominal
  double sigma_j = 0.0;      // s, edge jitter

  double frequency() const { return f_nominal + delta_f; }
  double period() const { return 1.0 / frequency(); }

  void validate() const {
    if (!(f_nominal > 0.0) || !std::isfinite(f_nominal))
      throw invalid_argument("clock nominal frequency must be positive");
    if (!(frequency() > 0.0) || !std::isfinite(frequency()))
      throw invalid_argument("clock frequency must be positive");
    if (!(sigma_j >= 0.0)) throw invalid_argument("clock jitter must be non-negative");
  }
};

struct NoiseParams {
  double sigma_j = 0.0;  // s, per clock edge
  double sigma_c = 0.0;  // s, per channel traverse

  // Noise inside the sawtooth: ping jitter + channel + responder sync jitter.
  double inner_variance() const { return sigma_c * sigma_c + 2.0 * sigma_j * sigma_j; }
  // Noise on the returned response: respond jitter + channel.
  double outer_variance() const { return sigma_c * sigma_c + sigma_j * sigma_j; }

  void validate() const {
    if (!(sigma_j >= 0.0) || !(sigma_c >= 0.0))
      throw invalid_argument("noise standard deviations must be non-negative");
  }
};

struct ProtocolConstants {
  double T_m = 1e-4;       // s, nominal ping interval
  double delta_0 = 20e-9;  // s, nominal responder wait
  double A_scale = 10e-9;  // s, public sawtooth amplitude
  std::size_t N = 10'000;  // measurements per epoch
  double c = kSpeedOfLight;

  void validate() const {
    if (!(T_m > 0.0)) throw invalid_argument("T_m must be positive");
    if (N < 2) throw invalid_argument("an epoch needs at least two measurements");
    if (!(A_scale > 0.0)) throw invalid_argument("A_scale must be positive");
    if (!(delta_0 >= 0.0)) throw invalid_argument("delta_0 must be non-negative");
    if (!(c > 0.0)) throw invalid_argument("propagation speed must be positive");
  }

  // Ping interval must cover at least two responder periods.
  void validate_against(double responder_period) const {
    validate();
    if (T_m < 2.0 * responder_period)
      throw invalid_argument("T_m must be at least twice the responder clock period");
  }
};

// Inputs of the sawtooth functions. delta and n may be empty (read as zeros).
struct SawtoothArgs {
  double f_d = 0.0;  // Hz
  double T_B = 0.0;  // s
  double phi = 0.0;  // rad, in [0, 2*pi)
  std::span<const double> t;
  std::span<const double> delta;
  std::span<const double> n;
};

namespace detail {

inline void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw invalid_argument(std::string("non-finite ") + what);
}

inline void validate_args(const SawtoothArgs& a) {
  check_finite(a.f_d, "f_d");
  check_finite(a.T_B, "T_B");
  check_finite(a.phi, "phi");
  if (!(a.T_B > 0.0)) throw invalid_argument("T_B must be positive");
  if (a.phi < 0.0 || a.phi >= kTwoPi) throw invalid_argument("phi must lie in [0, 2*pi)");
  if (!a.delta.empty() && a.delta.size() != a.t.size())
    throw invalid_argument("delta length differs from t length");
  if (!a.n.empty() && a.n.size() != a.t.size())
    throw invalid_argument("noise length differs from t length");
  for (double v : a.t) check_finite(v, "sample time");
  for (double v : a.n) check_finite(v, "noise sample");
  for (double v : a.delta) {
    check_finite(v, "dither delay");
    if (v < 0.0) throw invalid_argument("dither delays must be non-negative");
  }
}

// mod_{T_B}( T_B/(2 pi) * mod_{2 pi}(2 pi f_d t + phi) + extra )
inline double double_modulus(double f_d, double T_B, double phi, double t, double extra) {
  const double inner = pmod(kTwoPi * f_d * t + phi, kTwoPi);
  return pmod(T_B / kTwoPi * inner + extra, T_B);
}

}  // namespace detail

// Sawtooth of an RTT epoch; every element lies in [0, T_B). delta is ignored.
inline std::vector<double> sawtooth_h(const SawtoothArgs& args) {
  detail::validate_args(args);
  std::vector<double> out(args.t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double n = args.n.empty() ? 0.0 : args.n[i];
    out[i] = detail::double_modulus(args.f_d, args.T_B, args.phi, args.t[i], n);
  }
  return out;
}

// Dithered, amplitude-scaled sawtooth of a CLIMEX epoch; elements in [0, A).
inline std::vector<double> sawtooth_g(const SawtoothArgs& args, double A_scale) {
  detail::validate_args(args);
  detail::check_finite(A_scale, "A_scale");
  if (!(A_scale > 0.0)) throw invalid_argument("A_scale must be positive");
  const double scale = A_scale / args.T_B;
  std::vector<double> out(args.t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double n = args.n.empty() ? 0.0 : args.n[i];
    const double d = args.delta.empty() ? 0.0 : args.delta[i];
    double v = scale * detail::double_modulus(args.f_d, args.T_B, args.phi, args.t[i], d + n);
    if (v >= A_scale) v = 0.0;  // scale*x can round up to A for x just below T_B
    out[i] = v;
  }
  return out;
}

// Responder delay scaling: maps [0, T_B + delta_0] onto [0, A + delta_0].
inline double scale_delay(double delta_B, double T_B, double A_scale, double delta_0) {
  if (!(T_B > 0.0) || !(A_scale > 0.0)) throw invalid_argument("T_B and A_scale must be positive");
  if (!(delta_0 >= 0.0)) throw invalid_argument("delta_0 must be non-negative");
  if (!(delta_B >= 0.0) || delta_B > T_B + delta_0)
    throw domain_error("responder delay outside [0, T_B + delta_0]");
  return delta_B * ((A_scale + delta_0) / (T_B + delta_0));
}

// ---------------------------------------------------------------------------
// Randomness. Every consumer draws from a named stream of one scenario seed so
// that independent parts (noise, dither, clock phases) never share a sequence.

using Rng = std::mt19937_64;

enum class Stream : std::uint32_t {
  alice_noise = 1,
  bob_noise = 2,
  alice_dither = 3,
  bob_dither = 4,
  eve_noise = 5,
  clock_phases = 6,
  injection = 7,
  eve_clock = 8,
  injection_slots = 9,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

inline Stream noise_stream(NodeId initiator) {
  return initiator == NodeId::bob ? Stream::bob_noise : Stream::alice_noise;
}

inline Stream dither_stream(NodeId initiator) {
  return initiator == NodeId::bob ? Stream::bob_dither : Stream::alice_dither;
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

// Timing noise of one ping/respond exchange, drawn in a fixed order.
struct ExchangeNoise {
  double ping_jitter = 0.0;
  double forward_channel = 0.0;
  double sync_jitter = 0.0;
  double respond_jitter = 0.0;
  double return_channel = 0.0;

  // n: enters the responder's edge synchronization (inside the sawtooth).
  double inner() const { return ping_jitter + forward_channel + sync_jitter; }
  // w: rides on the returned response.
  double outer() const { return respond_jitter + return_channel; }
};

inline ExchangeNoise draw_exchange_noise(Rng& rng, const NoiseParams& noise) {
  ExchangeNoise e;
  e.ping_jitter = noise.sigma_j * standard_normal(rng);
  e.forward_channel = noise.sigma_c * standard_normal(rng);
  e.sync_jitter = noise.sigma_j * standard_normal(rng);
  e.respond_jitter = noise.sigma_j * standard_normal(rng);
  e.return_channel = noise.sigma_c * standard_normal(rng);
  return e;
}

// ---------------------------------------------------------------------------
// Epochs.

struct MeasurementEpoch {
  double timestamp = 0.0;      // t' (or t'', t''') in absolute seconds
  std::vector<double> times;   // sample instants relative to timestamp
  std::vector<double> values;  // measured delays, seconds
  NodeId collector = NodeId::alice;
  Protocol protocol = Protocol::rtt;
  std::vector<double> delta;       // collector-private dither record (CLIMEX only)
  double collector_frequency = 0;  // the collector knows its own clock
  // Set when the sawtooth height is the collector's own reference period
  // (edge-referenced arrival measurements) rather than the responder's.
  std::optional<double> reference_period;

  std::size_t size() const { return values.size(); }
};

// Beat between an initiator's ping schedule and a responder's clock.
struct BeatParams {
  double f_d = 0.0;               // initiator minus responder, Hz
  double responder_period = 0.0;  // true T_B
  double ping_interval = 0.0;     // true spacing of pings, s
};

// Pings are counted in whole initiator ticks: round(T_m * f_nominal) of them.
inline std::int64_t ping_ticks(const ClockParams& initiator, const ProtocolConstants& consts) {
  return std::max<std::int64_t>(1, std::llround(consts.T_m * initiator.f_nominal));
}

inline BeatParams beat_between(const ClockParams& initiator, const ClockParams& responder,
                               const ProtocolConstants& consts) {
  initiator.validate();
  responder.validate();
  BeatParams b;
  b.f_d = initiator.frequency() - responder.frequency();
  b.responder_period = responder.period();
  b.ping_interval = static_cast<double>(ping_ticks(initiator, consts)) / initiator.frequency();
  return b;
}

inline std::vector<double> sample_times(std::size_t N, double interval) {
  std::vector<double> t(N);
  for (std::size_t i = 0; i < N; ++i) t[i] = static_cast<double>(i) * interval;
  return t;
}

namespace detail {

inline MeasurementEpoch closed_form_epoch(const BeatParams& beat, const ProtocolConstants& consts,
                                          double rho, double phi, double t_prime,
                                          const NoiseParams& noise, std::uint64_t seed,
                                          NodeId initiator, std::span<const double> delta,
                                          bool climex, double collector_frequency) {
  consts.validate();
  noise.validate();
  if (!(rho >= 0.0)) throw invalid_argument("distance must be non-negative");
  if (climex && delta.size() != consts.N) throw invalid_argument("delta length must equal N");

  MeasurementEpoch ep;
  ep.timestamp = t_prime;
  ep.times = sample_times(consts.N, beat.ping_interval);
  ep.collector = initiator;
  ep.protocol = climex ? Protocol::climex : Protocol::rtt;
  ep.collector_frequency = collector_frequency;
  if (climex) ep.delta.assign(delta.begin(), delta.end());

  Rng rng = make_rng(seed, noise_stream(initiator));
  std::vector<double> n(consts.N), w(consts.N);
  for (std::size_t i = 0; i < consts.N; ++i) {
    const ExchangeNoise e = draw_exchange_noise(rng, noise);
    n[i] = e.inner();
    w[i] = e.outer();
  }

  SawtoothArgs args{beat.f_d, beat.responder_period, phi, ep.times, delta, n};
  const std::vector<double> saw =
      climex ? sawtooth_g(args, consts.A_scale) : sawtooth_h(args);
  const double offset = 2.0 * rho / consts.c;
  ep.values.resize(consts.N);
  for (std::size_t i = 0; i < consts.N; ++i) ep.values[i] = saw[i] + consts.delta_0 + offset + w[i];
  return ep;
}

}  // namespace detail

// y = h(f_d, T_B, phi, n) + delta_0 + 2 rho / c + w, noise from the initiator's
// noise stream of `seed` (the same draws the event simulation consumes).
inline MeasurementEpoch rtt_epoch_model(const BeatParams& beat, const ProtocolConstants& consts,
                                        double rho, double phi, double t_prime,
                                        const NoiseParams& noise, std::uint64_t seed,
                                        NodeId initiator = NodeId::alice,
                                        double collector_frequency = 0.0) {
  return detail::closed_form_epoch(beat, consts, rho, phi, t_prime, noise, seed, initiator, {},
                                   false, collector_frequency);
}

inline MeasurementEpoch rtt_epoch_model(const ClockParams& initiator_clock,
                                        const ClockParams& responder_clock,
                                        const ProtocolConstants& consts, double rho, double phi,
                                        double t_prime, const NoiseParams& noise,
                                        std::uint64_t seed, NodeId initiator = NodeId::alice) {
  return rtt_epoch_model(beat_between(initiator_clock, responder_clock, consts), consts, rho, phi,
                         t_prime, noise, seed, initiator, initiator_clock.frequency());
}

// y = g(f_d, A, phi, Delta, n) + delta_0 + 2 rho / c + w.
inline MeasurementEpoch climex_epoch_model(const BeatParams& beat, const ProtocolConstants& consts,
                                           double rho, double phi, double t_prime,
                                           const NoiseParams& noise, std::uint64_t seed,
                                           std::span<const double> delta,
                                           NodeId initiator = NodeId::alice,
                                           double collector_frequency = 0.0) {
  return detail::closed_form_epoch(beat, consts, rho, phi, t_prime, noise, seed, initiator, delta,
                                   true, collector_frequency);
}

inline MeasurementEpoch climex_epoch_model(const ClockParams& initiator_clock,
                                           const ClockParams& responder_clock,
                                           const ProtocolConstants& consts, double rho, double phi,
                                           double t_prime, const NoiseParams& noise,
                                           std::uint64_t seed, std::span<const double> delta,
                                           NodeId initiator = NodeId::alice) {
  return climex_epoch_model(beat_between(initiator_clock, responder_clock, consts), consts, rho,
                            phi, t_prime, noise, seed, delta, initiator,
                            initiator_clock.frequency());
}

}  // namespace climex
