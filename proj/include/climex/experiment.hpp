#pragma once

// One simulated exchange, estimated from one party's point of view and scored
// against the scenario's truth. Shared by the CLI and the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "climex/adversary.hpp"
#include "climex/config.hpp"
#include "climex/estimators.hpp"
#include "climex/protocol_sim.hpp"
#include "climex/secrecy_bits.hpp"
#include "climex/signal_model.hpp"

namespace climex {

inline double phase_distance(double a, double b) {
  const double d = std::abs(wrap_phase(a) - wrap_phase(b));
  return std::min(d, kTwoPi - d);
}

struct TrialResult {
  NodeId role = NodeId::alice;
  double f_d_true = 0.0;  // as seen by the role's estimator, Hz
  double f_d_hat = 0.0;
  double phi_hat = 0.0;
  double rho_hat = std::numeric_limits<double>::quiet_NaN();
  double f_counterpart_hat = std::numeric_limits<double>::quiet_NaN();
  double t_test = std::numeric_limits<double>::quiet_NaN();
  double phi_test_hat = std::numeric_limits<double>::quiet_NaN();
  double phi_test_true = std::numeric_limits<double>::quiet_NaN();
  // Eve only: period from the TDOA fit, Alice's frequency from her own-clock
  // timing of the pings; f_counterpart_hat is then f_A_hat - f_d_hat.
  double T_B_hat = std::numeric_limits<double>::quiet_NaN();
  double f_A_hat = std::numeric_limits<double>::quiet_NaN();
  bool at_grid_edge = false;

  double f_d_error() const { return std::abs(f_d_hat - f_d_true); }
  double phi_test_error() const {
    return std::isnan(phi_test_hat) ? phi_test_hat : phase_distance(phi_test_hat, phi_test_true);
  }
  double rho_error(double rho_true) const { return std::abs(rho_hat - rho_true); }
};

// Alice or Bob estimate from their own epoch; Eve from what she hears of
// Alice's epoch.
inline TrialResult run_trial(const RunConfig& rc, NodeId role) {
  const ScenarioConfig& sc = rc.scenario;
  TrialResult out;
  out.role = role;
  if (role == NodeId::eve) {
    if (!sc.eve) throw invalid_argument("scenario has no eavesdropper");
    const EpochRun run = run_protocol_epoch(sc, NodeId::alice);
    const EveEpoch ee = eve_tdoa_epoch(run.log, *sc.eve, sc.noise, sc.consts, sc.seed);
    const EveEstimate est = eve_estimate_rtt(ee, rc.eve_grid);
    out.f_d_true = sc.alice.clock.frequency() - sc.bob.clock.frequency();
    out.f_d_hat = est.f_d_hat;
    out.phi_hat = est.phi_hat;
    out.T_B_hat = est.T_B_hat;
    out.at_grid_edge = est.at_grid_edge;
    const MeasurementEpoch ia =
        eve_interarrival_epoch(run.log, *sc.eve, sc.noise, sc.consts, sc.seed);
    const ParamEstimate ia_est = grid_search(ia, rc.grid, sc.consts);
    out.f_A_hat = ia_est.f_counterpart_hat;
    out.f_counterpart_hat = out.f_A_hat - out.f_d_hat;
    out.at_grid_edge = out.at_grid_edge || ia_est.at_grid_edge;
    return out;
  }
  const EpochRun run = run_protocol_epoch(sc, role);
  const NodeState& self = sc.node(role);
  const NodeState& other = sc.node(counterpart(role));
  const ParamEstimate est = grid_search(run.epoch, rc.grid, sc.consts, run.epoch.delta);
  out.f_d_true = self.clock.frequency() - other.clock.frequency();
  out.f_d_hat = est.f_d_hat;
  out.phi_hat = est.phi_hat;
  out.rho_hat = est.rho_hat;
  out.f_counterpart_hat = est.f_counterpart_hat;
  out.at_grid_edge = est.at_grid_edge;
  out.t_test = rc.t_test.value_or(run.epoch.timestamp + 0.5 * static_cast<double>(sc.consts.N) *
                                                            sc.consts.T_m);
  out.phi_test_hat = predict_phi_test(est, self.clock.frequency(), out.t_test, sc.consts.c);
  out.phi_test_true = measure_phi_test_local(other, out.t_test);
  return out;
}

struct DetectionResult {
  InjectionKind injection = InjectionKind::none;
  std::vector<std::size_t> injected;  // sorted
  std::vector<std::size_t> flagged;   // sorted
  ParamEstimate estimate;

  bool flagged_index(std::size_t i) const {
    return std::binary_search(flagged.begin(), flagged.end(), i);
  }
  // Every injected response flagged.
  bool all_injections_flagged() const {
    if (injected.empty()) return false;
    for (std::size_t i : injected)
      if (!flagged_index(i)) return false;
    return true;
  }
  std::size_t false_flags() const {
    std::size_t n = 0;
    for (std::size_t i : flagged)
      if (!std::binary_search(injected.begin(), injected.end(), i)) ++n;
    return n;
  }
};

// Distinct ping indices drawn uniformly from the epoch.
inline std::vector<std::size_t> injection_slots(std::size_t N, std::size_t count,
                                                std::uint64_t seed) {
  if (count > N) throw invalid_argument("more injections than pings");
  std::vector<std::size_t> all(N);
  for (std::size_t i = 0; i < N; ++i) all[i] = i;
  Rng rng = make_rng(seed, Stream::injection_slots);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> u(i, N - 1);
    std::swap(all[i], all[u(rng)]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

// Alice's epoch, optionally with Eve answering some of her pings first,
// robustly fitted and screened for responses off the sawtooth.
inline DetectionResult run_detection(const RunConfig& rc, InjectionKind kind) {
  const ScenarioConfig& sc = rc.scenario;
  DetectionResult out;
  out.injection = kind;
  EpochRun run = run_protocol_epoch(sc, NodeId::alice);
  MeasurementEpoch ep = run.epoch;
  if (kind != InjectionKind::none) {
    if (!sc.eve) throw invalid_argument("injection needs an eavesdropper in the scenario");
    out.injected = injection_slots(sc.consts.N, rc.injection_count, sc.seed);
    const InjectionPlan plan = kind == InjectionKind::random_timing
                                   ? plan_random_timing(sc.consts, out.injected, sc.seed)
                                   : plan_oracle_perfect(run.log, out.injected);
    const ArrivalLog log = inject_responses(run.log, plan, *sc.eve);
    ep = remeasure(ep, log);
  }
  out.estimate = robust_fit(ep, rc.grid, sc.consts, ep.delta, rc.detect_trim);
  out.flagged = detect_outliers(ep, out.estimate, sc.consts, ep.delta, rc.detect_k_sigma);
  return out;
}

// Both parties' key bits from one exchange. Alice knows f_A and predicts
// phi_test; Bob knows f_B and reads phi_test off his own clock.
struct AgreementTrial {
  KeyMaterial alice;
  KeyMaterial bob;
  KeyPair keys;
};

inline AgreementTrial run_key_agreement(const RunConfig& rc) {
  const ScenarioConfig& sc = rc.scenario;
  const ExchangeRun ex = run_exchange(sc);
  const ParamEstimate ea = grid_search(ex.epoch_a, rc.grid, sc.consts, ex.epoch_a.delta);
  const ParamEstimate eb = grid_search(ex.epoch_b, rc.grid, sc.consts, ex.epoch_b.delta);
  const double f_A = sc.alice.clock.frequency(), f_B = sc.bob.clock.frequency();
  const double t_test = rc.t_test.value_or(ex.epoch_a.timestamp + 0.5 * static_cast<double>(sc.consts.N) *
                                                                      sc.consts.T_m);
  AgreementTrial out;
  out.alice = {f_A, ea.f_counterpart_hat, predict_phi_test(ea, f_A, t_test, sc.consts.c),
               ea.rho_hat};
  out.bob = {eb.f_counterpart_hat, f_B, measure_phi_test_local(sc.bob, t_test), eb.rho_hat};
  out.keys = derive_key(out.alice, out.bob, rc.budget);
  return out;
}

}  // namespace climex
