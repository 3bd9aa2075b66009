#pragma once

// Event-level simulation of RTT and CLIMEX ping/respond exchanges.
//
// Pings leave on the initiator's clock edges, every round(T_m * f_nominal)
// ticks. Under CLIMEX the initiator moves each ping Delta_i ahead of its
// scheduled edge (equivalently a delay of k*T - Delta_i after an earlier
// edge), and the responder maps its edge-synchronization wait w in [0, T)
// onto w * A / T before adding the nominal wait delta_0. Timing noise is
// applied per exchange: the aggregate n displaces the responder's
// synchronizing edge relative to the ping arrival, while the respond jitter
// and return-channel noise ride on the response and the collector's
// timestamp. Propagation itself is exact, so the arrival log satisfies
// arrival = emit + distance / c.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "climex/errors.hpp"
#include "climex/signal_model.hpp"

namespace climex {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct NodeState {
  NodeId id = NodeId::alice;
  ClockParams clock;
  double clock_phase = 0.0;  // rad; edges at (k + clock_phase / 2 pi) * T
  std::optional<Point> position;

  // First clock edge at or after t.
  double next_edge(double t) const {
    const double T = clock.period();
    const double offset = clock_phase / kTwoPi * T;
    return offset + std::ceil((t - offset) / T) * T;
  }
};

struct Geometry {
  double rho_ab = 0.0;
  double rho_ae = 0.0;
  double rho_be = 0.0;

  double between(NodeId a, NodeId b) const {
    if (a == b) return 0.0;
    const auto pair = [&](NodeId x, NodeId y) { return (a == x && b == y) || (a == y && b == x); };
    if (pair(NodeId::alice, NodeId::bob)) return rho_ab;
    if (pair(NodeId::alice, NodeId::eve)) return rho_ae;
    return rho_be;
  }

  // The only distance combination visible in a listener's TDOA.
  double eve_constant() const { return rho_ab + rho_be - rho_ae; }

  void validate() const {
    if (!(rho_ab >= 0.0) || !(rho_ae >= 0.0) || !(rho_be >= 0.0))
      throw invalid_argument("distances must be non-negative");
  }
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct DitherSpec {
  enum class Kind { none, uniform };
  Kind kind = Kind::none;
  double upper = 0.0;  // s, for U(0, upper)

  void validate() const {
    if (!(upper >= 0.0)) throw invalid_argument("dither upper bound must be non-negative");
  }
};

struct ScenarioConfig {
  NodeState alice{NodeId::alice, {}, 0.0, {}};
  NodeState bob{NodeId::bob, {}, 0.0, {}};
  std::optional<NodeState> eve;
  Geometry geometry;
  ProtocolConstants consts;
  NoiseParams noise;
  DitherSpec dither;
  Protocol protocol = Protocol::climex;
  std::uint64_t seed = 1;
  double start_time = 0.0;  // Alice's epoch starts at the first edge at or after this
  double gap = 0.0;         // idle time between Alice's and Bob's epochs

  const NodeState& node(NodeId id) const {
    if (id == NodeId::alice) return alice;
    if (id == NodeId::bob) return bob;
    if (!eve) throw invalid_argument("scenario has no eavesdropper");
    return *eve;
  }

  void validate() const {
    alice.clock.validate();
    bob.clock.validate();
    if (eve) eve->clock.validate();
    geometry.validate();
    consts.validate_against(std::max(alice.clock.period(), bob.clock.period()));
    noise.validate();
    dither.validate();
  }
};

enum class SignalKind { ping, respond };

struct Signal {
  std::size_t index = 0;  // ping index within its epoch
  NodeId initiator = NodeId::alice;  // whose epoch the signal belongs to
  NodeId emitter = NodeId::alice;
  SignalKind kind = SignalKind::ping;
  double emit_time = 0.0;
  // Arrival at alice, bob, eve; NaN when the node is absent.
  std::array<double, 3> arrival{};
  // Respond only: emit_time minus the ping's arrival at the responder.
  double responder_delay = std::numeric_limits<double>::quiet_NaN();
  bool injected = false;
};

// World truth of an exchange. Only the adversary and oracle layers read it.
struct ArrivalLog {
  std::vector<Signal> signals;
  Geometry geometry;
  double c = kSpeedOfLight;
  bool has_eve = false;
};

struct EpochRun {
  MeasurementEpoch epoch;
  ArrivalLog log;
};

struct ExchangeRun {
  MeasurementEpoch epoch_a;
  MeasurementEpoch epoch_b;
  ArrivalLog log;
};

inline NodeId counterpart(NodeId id) { return id == NodeId::alice ? NodeId::bob : NodeId::alice; }

// First ping edge of the initiator's epoch (t' for Alice, t'' for Bob).
inline double epoch_start(const ScenarioConfig& cfg, NodeId initiator) {
  const double t_alice = cfg.alice.next_edge(cfg.start_time);
  if (initiator == NodeId::alice) return t_alice;
  const double interval_a =
      static_cast<double>(ping_ticks(cfg.alice.clock, cfg.consts)) / cfg.alice.clock.frequency();
  const double end_a = t_alice + static_cast<double>(cfg.consts.N) * interval_a + cfg.gap;
  double t = cfg.bob.next_edge(end_a);
  if (t <= end_a) t += cfg.bob.clock.period();
  return t;
}

// Sawtooth phase at the first sample: 2 pi times the fraction of a responder
// period from the first nominal ping's arrival to the responder's next edge.
inline double epoch_phase(const ScenarioConfig& cfg, NodeId initiator, double t_start) {
  const NodeState& resp = cfg.node(counterpart(initiator));
  const double T = resp.clock.period();
  const double beta = resp.clock_phase / kTwoPi * T;
  const double arrival = t_start + cfg.geometry.rho_ab / cfg.consts.c;
  return wrap_phase(kTwoPi * pmod(beta - arrival, T) / T);
}

inline BeatParams epoch_beat(const ScenarioConfig& cfg, NodeId initiator) {
  return beat_between(cfg.node(initiator).clock, cfg.node(counterpart(initiator)).clock,
                      cfg.consts);
}

namespace detail {

inline void fill_arrivals(Signal& s, const ScenarioConfig& cfg) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (NodeId id : {NodeId::alice, NodeId::bob, NodeId::eve}) {
    const auto k = static_cast<std::size_t>(id);
    if (id == NodeId::eve && !cfg.eve) {
      s.arrival[k] = nan;
      continue;
    }
    s.arrival[k] = s.emit_time + cfg.geometry.between(s.emitter, id) / cfg.consts.c;
  }
}

inline EpochRun run_epoch(const ScenarioConfig& cfg, NodeId initiator, bool climex) {
  cfg.validate();
  const NodeState& init = cfg.node(initiator);
  const NodeState& resp = cfg.node(counterpart(initiator));
  const ProtocolConstants& k = cfg.consts;
  const double T_resp = resp.clock.period();
  const double T_resp_offset = resp.clock_phase / kTwoPi * T_resp;
  const double interval = static_cast<double>(ping_ticks(init.clock, k)) / init.clock.frequency();
  const bool dithered = climex && cfg.dither.kind == DitherSpec::Kind::uniform;
  const double max_lead = dithered ? cfg.dither.upper : 0.0;

  EpochRun run;
  MeasurementEpoch& ep = run.epoch;
  ep.timestamp = epoch_start(cfg, initiator);
  ep.times = sample_times(k.N, interval);
  ep.values.resize(k.N);
  ep.collector = initiator;
  ep.protocol = climex ? Protocol::climex : Protocol::rtt;
  ep.collector_frequency = init.clock.frequency();
  if (climex) ep.delta.assign(k.N, 0.0);

  run.log.geometry = cfg.geometry;
  run.log.c = k.c;
  run.log.has_eve = cfg.eve.has_value();
  run.log.signals.reserve(2 * k.N);

  Rng noise_rng = make_rng(cfg.seed, noise_stream(initiator));
  Rng dither_rng = make_rng(cfg.seed, dither_stream(initiator));
  std::uniform_real_distribution<double> dither(0.0, 1.0);

  for (std::size_t i = 0; i < k.N; ++i) {
    const double edge = ep.timestamp + ep.times[i];
    const double lead = dithered ? cfg.dither.upper * dither(dither_rng) : 0.0;
    if (climex) ep.delta[i] = lead;
    const ExchangeNoise e = draw_exchange_noise(noise_rng, cfg.noise);

    Signal ping;
    ping.index = i;
    ping.initiator = initiator;
    ping.emitter = initiator;
    ping.kind = SignalKind::ping;
    ping.emit_time = edge - lead;
    fill_arrivals(ping, cfg);
    const double arrival = ping.arrival[static_cast<std::size_t>(resp.id)];

    // Next responder edge after the (noise-displaced) ping capture.
    const double capture = arrival - e.inner();
    const double sync_edge =
        T_resp_offset + std::ceil((capture - T_resp_offset) / T_resp) * T_resp;
    double wait = sync_edge - capture;
    if (wait >= T_resp) wait -= T_resp;
    if (wait < 0.0) wait += T_resp;

    const double scaled = climex ? scale_delay(wait, T_resp, k.A_scale, 0.0) : wait;
    const double delay = scaled + k.delta_0 + e.respond_jitter;

    Signal respond;
    respond.index = i;
    respond.initiator = initiator;
    respond.emitter = resp.id;
    respond.kind = SignalKind::respond;
    respond.emit_time = arrival + delay;
    respond.responder_delay = delay;
    if (!(respond.emit_time > arrival))
      throw causality_error("respond scheduled before its ping arrived (index " +
                            std::to_string(i) + ")");
    fill_arrivals(respond, cfg);
    const double back = respond.arrival[static_cast<std::size_t>(initiator)];
    if (back >= edge + interval - max_lead)
      throw protocol_overrun("response arrives after the next ping (index " + std::to_string(i) +
                             ")");

    ep.values[i] = (back - ping.emit_time) + e.return_channel;
    run.log.signals.push_back(ping);
    run.log.signals.push_back(respond);
  }
  return run;
}

}  // namespace detail

inline EpochRun run_rtt_epoch(const ScenarioConfig& cfg, NodeId initiator) {
  return detail::run_epoch(cfg, initiator, false);
}

inline EpochRun run_climex_epoch(const ScenarioConfig& cfg, NodeId initiator) {
  return detail::run_epoch(cfg, initiator, true);
}

inline EpochRun run_protocol_epoch(const ScenarioConfig& cfg, NodeId initiator) {
  return detail::run_epoch(cfg, initiator, cfg.protocol == Protocol::climex);
}

// Alice's epoch followed by Bob's; one log covering both.
inline ExchangeRun run_exchange(const ScenarioConfig& cfg) {
  EpochRun a = run_protocol_epoch(cfg, NodeId::alice);
  EpochRun b = run_protocol_epoch(cfg, NodeId::bob);
  ExchangeRun out;
  out.epoch_a = std::move(a.epoch);
  out.epoch_b = std::move(b.epoch);
  out.log = std::move(a.log);
  out.log.signals.insert(out.log.signals.end(), b.log.signals.begin(), b.log.signals.end());
  return out;
}

// Sub-log of the signals belonging to one initiator's epoch.
inline ArrivalLog epoch_log(const ArrivalLog& log, NodeId initiator) {
  ArrivalLog out = log;
  out.signals.clear();
  for (const Signal& s : log.signals) {
    if (s.initiator == initiator) out.signals.push_back(s);
  }
  return out;
}

}  // namespace climex
