// climex-cli: simulate, estimate, sweep, budget, detect.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "climex/climex.hpp"

namespace {

using namespace climex;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
  bool timing = false;
};

// Locale-independent number text.
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s.empty() ? "-" : s;
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw config_error(path, 0, "cannot open output file");
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

NodeId parse_role(const std::string& s) {
  if (s == "alice") return NodeId::alice;
  if (s == "bob") return NodeId::bob;
  return NodeId::eve;
}

void warn(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << "warning: " << msg << '\n';
}

int cmd_simulate(const Globals& g, const std::string& cfg, const std::string& role) {
  const RunConfig rc = load_run_config(cfg, g.seed);
  const EpochRun run = run_protocol_epoch(rc.scenario, parse_role(role));
  Output out(g.out);
  std::ostream& os = out.stream();
  os << "index,t_s,y_s,protocol,collector\n";
  const MeasurementEpoch& ep = run.epoch;
  for (std::size_t i = 0; i < ep.values.size(); ++i)
    os << i << ',' << num(ep.timestamp + ep.times[i]) << ',' << num(ep.values[i]) << ','
       << to_string(ep.protocol) << ',' << to_string(ep.collector) << '\n';
  return 0;
}

void write_estimate_header(std::ostream& os) {
  os << "role,f_d_true_hz,f_d_hat_hz,f_d_error_hz,phi_hat_rad,rho_hat_m,rho_error_m,"
        "f_counterpart_hat_hz,f_a_hat_hz,t_test_s,phi_test_hat_rad,phi_test_true_rad,"
        "phi_test_error_rad,t_b_hat_s,at_grid_edge\n";
}

void write_estimate_row(std::ostream& os, const TrialResult& r, double rho_true) {
  const bool eve = r.role == NodeId::eve;
  os << to_string(r.role) << ',' << num(r.f_d_true) << ',' << num(r.f_d_hat) << ','
     << num(r.f_d_error()) << ',' << num(r.phi_hat) << ',' << num(r.rho_hat) << ','
     << num(eve ? std::nan("") : r.rho_error(rho_true)) << ',' << num(r.f_counterpart_hat) << ','
     << num(r.f_A_hat) << ',' << num(r.t_test) << ',' << num(r.phi_test_hat) << ','
     << num(r.phi_test_true) << ',' << num(r.phi_test_error()) << ',' << num(r.T_B_hat) << ','
     << (r.at_grid_edge ? 1 : 0) << '\n';
}

int cmd_estimate(const Globals& g, const std::string& cfg, const std::string& role) {
  const RunConfig rc = load_run_config(cfg, g.seed);
  const TrialResult r = run_trial(rc, parse_role(role));
  if (r.at_grid_edge) warn(g, "estimate at the edge of the f_d search range");
  Output out(g.out);
  write_estimate_header(out.stream());
  write_estimate_row(out.stream(), r, rc.scenario.geometry.rho_ab);
  return 0;
}

int cmd_sweep(const Globals& g, const std::string& path) {
  SweepSpec spec = load_sweep(path);
  if (g.seed) spec.seed_base = *g.seed;
  Output out(g.out);
  std::ostream& os = out.stream();
  os << spec.param << ",trial,seed,f_d_error_hz,phi_test_error_rad,rho_error_m,at_grid_edge";
  if (g.timing) os << ",runtime_s";
  os << '\n';
  std::size_t edges = 0;
  for (double v : spec.values) {
    for (std::size_t t = 0; t < spec.trials; ++t) {
      const std::uint64_t seed = spec.seed_base + t;
      const auto t0 = std::chrono::steady_clock::now();
      RunConfig rc = load_run_config(spec.base_config, seed);
      try {
        apply_sweep_value(rc, spec.param, v);
      } catch (const invalid_argument& e) {
        throw config_error(path, 0, e.what());
      }
      const TrialResult r = run_trial(rc, spec.role);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      edges += r.at_grid_edge ? 1 : 0;
      const bool eve = spec.role == NodeId::eve;
      os << num(v) << ',' << t << ',' << seed << ',' << num(r.f_d_error()) << ','
         << num(r.phi_test_error()) << ','
         << num(eve ? std::nan("") : r.rho_error(rc.scenario.geometry.rho_ab)) << ','
         << (r.at_grid_edge ? 1 : 0);
      if (g.timing) os << ',' << num(secs);
      os << '\n';
    }
  }
  if (edges) warn(g, std::to_string(edges) + " trial(s) ended at the edge of the f_d range");
  return 0;
}

int cmd_budget(const Globals& g, const std::string& cfg) {
  const RunConfig rc = load_run_config(cfg, g.seed);
  const SecrecyBudget b = budget(rc.budget);
  Output out(g.out);
  std::ostream& os = out.stream();
  os << "quantity,value,unit\n"
     << "cardinality_T," << num(b.cardinality_T) << ",pairs\n"
     << "log2_T," << num(b.log2_T) << ",bits\n"
     << "log2_phi," << num(b.log2_phi) << ",bits\n"
     << "log2_rho," << num(b.log2_rho) << ",bits\n"
     << "log2_total," << num(b.log2_total()) << ",bits\n"
     << "N_f," << b.N_f << ",bits\n"
     << "N_phi," << b.N_phi << ",bits\n"
     << "N_rho," << b.N_rho << ",bits\n"
     << "N_total," << b.N_total << ",bits\n"
     << "N_total_rounded," << b.N_total_rounded << ",bits\n";
  return 0;
}

int cmd_detect(const Globals& g, const std::string& cfg, const std::string& injection) {
  RunConfig rc = load_run_config(cfg, g.seed);
  if (injection == "none") rc.injection = InjectionKind::none;
  else if (injection == "random") rc.injection = InjectionKind::random_timing;
  else if (injection == "oracle") rc.injection = InjectionKind::oracle_perfect;
  const DetectionResult d = run_detection(rc, rc.injection);
  std::string verdict;
  if (d.injection == InjectionKind::none)
    verdict = d.flagged.empty() ? "clean" : "flagged";
  else
    verdict = d.all_injections_flagged() ? "detected" : "undetected";
  const char* kind = d.injection == InjectionKind::none            ? "none"
                     : d.injection == InjectionKind::random_timing ? "random-timing"
                                                                   : "oracle-perfect";
  Output out(g.out);
  std::ostream& os = out.stream();
  os << "field,value\n"
     << "injection," << kind << '\n'
     << "injected_indices," << join(d.injected) << '\n'
     << "flagged_indices," << join(d.flagged) << '\n'
     << "false_flags," << d.false_flags() << '\n'
     << "k_sigma," << num(rc.detect_k_sigma) << '\n'
     << "verdict," << verdict << '\n';
  if (d.injection == InjectionKind::oracle_perfect)
    os << "caveat,oracle strategy: responses placed from ground truth; undetected by "
          "construction\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clocked impulse exchange simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "override the scenario seed (sweep: seed base)");
  app.add_option("--out", g.out, "output file (default stdout)");
  app.add_flag("--quiet", g.quiet, "suppress warnings");
  app.add_flag("--timing", g.timing, "add a runtime column to sweep output");

  std::string config, role = "alice", injection;
  const auto roles = CLI::IsMember({"alice", "bob", "eve"});

  auto* sim = app.add_subcommand("simulate", "write one epoch as CSV");
  sim->add_option("config", config, "scenario file")->required();
  sim->add_option("--role", role, "initiator")->check(CLI::IsMember({"alice", "bob"}));

  auto* est = app.add_subcommand("estimate", "estimate parameters from one epoch");
  est->add_option("config", config, "scenario file")->required();
  est->add_option("--role", role, "estimating party")->check(roles);

  auto* sweep = app.add_subcommand("sweep", "run a parameter sweep");
  sweep->add_option("sweep", config, "sweep file")->required();

  auto* bud = app.add_subcommand("budget", "secret-bit budget");
  bud->add_option("config", config, "scenario file")->required();

  auto* det = app.add_subcommand("detect", "inject responses and screen for outliers");
  det->add_option("config", config, "scenario file")->required();
  det->add_option("--injection", injection, "none, random or oracle (default from config)")
      ->check(CLI::IsMember({"none", "random", "oracle"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (sim->parsed()) return cmd_simulate(g, config, role);
    if (est->parsed()) return cmd_estimate(g, config, role);
    if (sweep->parsed()) return cmd_sweep(g, config);
    if (bud->parsed()) return cmd_budget(g, config);
    if (det->parsed()) return cmd_detect(g, config, injection);
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
