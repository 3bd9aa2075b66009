#pragma once

// Flat key = value scenario and sweep files.
//
//   # comment
//   f0_hz = 100e6
//   protocol = climex
//
// Units live in the key names. Unknown or repeated keys are errors, reported
// with the file name and line.

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "climex/adversary.hpp"
#include "climex/errors.hpp"
#include "climex/estimators.hpp"
#include "climex/protocol_sim.hpp"
#include "climex/secrecy_bits.hpp"
#include "climex/signal_model.hpp"

namespace climex {

class KeyValueFile {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static KeyValueFile parse(std::istream& in, const std::string& source) {
    KeyValueFile f;
    f.source_ = source;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const auto hash = raw.find('#');
      if (hash != std::string::npos) raw.erase(hash);
      const std::string text = trim(raw);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) throw config_error(source, line, "expected key = value");
      const std::string key = trim(text.substr(0, eq));
      const std::string value = trim(text.substr(eq + 1));
      if (key.empty()) throw config_error(source, line, "missing key");
      if (value.empty()) throw config_error(source, line, "missing value for '" + key + "'");
      if (f.entries_.count(key)) throw config_error(source, line, "duplicate key '" + key + "'");
      f.entries_[key] = {value, line};
    }
    return f;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error(path, 0, "cannot open file");
    return parse(in, path);
  }

  const std::string& source() const { return source_; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::optional<std::string> text(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    used_.insert(key);
    return it->second.value;
  }

  std::optional<double> number(const std::string& key) const {
    auto t = text(key);
    if (!t) return std::nullopt;
    const char* s = t->c_str();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s, &end);
    if (end == s || *end != '\0' || errno == ERANGE || !std::isfinite(v))
      throw config_error(source_, line(key), "'" + key + "' is not a finite number");
    return v;
  }

  std::optional<std::uint64_t> count(const std::string& key) const {
    auto t = text(key);
    if (!t) return std::nullopt;
    const char* s = t->c_str();
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0' || errno == ERANGE || (*t)[0] == '-')
      throw config_error(source_, line(key), "'" + key + "' is not a non-negative integer");
    return v;
  }

  std::vector<double> numbers(const std::string& key) const {
    auto t = text(key);
    std::vector<double> out;
    if (!t) return out;
    std::stringstream ss(*t);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      char* end = nullptr;
      const double v = std::strtod(item.c_str(), &end);
      if (item.empty() || *end != '\0' || !std::isfinite(v))
        throw config_error(source_, line(key), "'" + key + "' holds a non-numeric item");
      out.push_back(v);
    }
    return out;
  }

  std::size_t line(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw config_error(source_, line(key), what);
  }

  // Every key must have been read by someone.
  void reject_unused() const {
    for (const auto& [k, e] : entries_)
      if (!used_.count(k)) throw config_error(source_, e.line, "unknown key '" + k + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

enum class InjectionKind { none, random_timing, oracle_perfect };

struct RunConfig {
  ScenarioConfig scenario;
  SearchGrid grid;
  EveGrid eve_grid;
  BudgetInputs budget;
  std::optional<double> t_test;  // absolute s; mid-epoch when unset
  double detect_k_sigma = 4.0;
  double detect_trim = 0.05;
  InjectionKind injection = InjectionKind::none;
  std::size_t injection_count = 1;
};

namespace detail {

inline double positive(const KeyValueFile& f, const std::string& key, double v) {
  if (!(v > 0.0)) f.fail(key, "'" + key + "' must be positive");
  return v;
}

inline double non_negative(const KeyValueFile& f, const std::string& key, double v) {
  if (!(v >= 0.0)) f.fail(key, "'" + key + "' must be non-negative");
  return v;
}

inline double clock_offset(const KeyValueFile& f, const std::string& node, double f0) {
  const std::string ppm = "ppm_" + node, hz = "df_" + node + "_hz";
  if (f.has(ppm) && f.has(hz)) f.fail(hz, "give either " + ppm + " or " + hz + ", not both");
  if (auto v = f.number(ppm)) return *v * 1e-6 * f0;
  if (auto v = f.number(hz)) return *v;
  return 0.0;
}

}  // namespace detail

// Scenario from a parsed file. seed_override replaces the file's seed.
inline RunConfig load_run_config(const KeyValueFile& f,
                                 std::optional<std::uint64_t> seed_override = std::nullopt) {
  using detail::non_negative;
  using detail::positive;
  RunConfig rc;
  ScenarioConfig& sc = rc.scenario;

  if (auto v = f.count("seed")) sc.seed = *v;
  if (seed_override) sc.seed = *seed_override;

  const double f0 = positive(f, "f0_hz", f.number("f0_hz").value_or(100e6));
  const double sigma_j = non_negative(f, "sigma_j_s", f.number("sigma_j_s").value_or(0.0));
  const double sigma_c = non_negative(f, "sigma_c_s", f.number("sigma_c_s").value_or(0.0));
  sc.noise = {sigma_j, sigma_c};

  sc.alice.id = NodeId::alice;
  sc.alice.clock = {f0, detail::clock_offset(f, "a", f0), sigma_j};
  sc.bob.id = NodeId::bob;
  sc.bob.clock = {f0, detail::clock_offset(f, "b", f0), sigma_j};
  const bool want_eve = f.has("ppm_e") || f.has("df_e_hz") || f.has("rho_ae_m") ||
                        f.has("rho_be_m") || f.has("phase_e_rad");
  if (want_eve) {
    NodeState e;
    e.id = NodeId::eve;
    e.clock = {f0, detail::clock_offset(f, "e", f0), sigma_j};
    sc.eve = e;
  }
  try {
    sc.alice.clock.validate();
    sc.bob.clock.validate();
    if (sc.eve) sc.eve->clock.validate();
  } catch (const invalid_argument& e) {
    throw config_error(f.source(), 0, e.what());
  }

  // Clock phases: given, or drawn from the seed.
  Rng prng = make_rng(sc.seed, Stream::clock_phases);
  std::uniform_real_distribution<double> uphase(0.0, kTwoPi);
  const double pa = uphase(prng), pb = uphase(prng), pe = uphase(prng);
  const auto phase = [&](const std::string& key, double drawn) {
    auto v = f.number(key);
    if (!v) return drawn;
    if (*v < 0.0 || *v >= kTwoPi) f.fail(key, "'" + key + "' must lie in [0, 2 pi)");
    return *v;
  };
  sc.alice.clock_phase = phase("phase_a_rad", pa);
  sc.bob.clock_phase = phase("phase_b_rad", pb);
  if (sc.eve) sc.eve->clock_phase = phase("phase_e_rad", pe);

  ProtocolConstants& k = sc.consts;
  k.T_m = positive(f, "tm_s", f.number("tm_s").value_or(1e-4));
  k.N = static_cast<std::size_t>(f.count("n_pings").value_or(10000));
  if (k.N < 2) f.fail("n_pings", "n_pings must be at least 2");
  k.delta_0 = non_negative(f, "delta0_s", f.number("delta0_s").value_or(2.0 * sc.bob.clock.period()));
  k.A_scale = positive(f, "a_scale_s", f.number("a_scale_s").value_or(1.0 / f0));
  k.c = positive(f, "c_mps", f.number("c_mps").value_or(kSpeedOfLight));

  sc.geometry.rho_ab = non_negative(f, "rho_ab_m", f.number("rho_ab_m").value_or(1.0));
  sc.geometry.rho_ae = non_negative(f, "rho_ae_m", f.number("rho_ae_m").value_or(sc.geometry.rho_ab));
  sc.geometry.rho_be = non_negative(f, "rho_be_m", f.number("rho_be_m").value_or(sc.geometry.rho_ab));

  if (auto p = f.text("protocol")) {
    if (*p == "rtt") sc.protocol = Protocol::rtt;
    else if (*p == "climex") sc.protocol = Protocol::climex;
    else f.fail("protocol", "protocol must be rtt or climex");
  }
  const std::string dk = f.text("dither_kind").value_or(
      f.has("dither_upper_s") || f.has("dither_upper_periods") ? "uniform" : "none");
  if (dk == "none") sc.dither.kind = DitherSpec::Kind::none;
  else if (dk == "uniform") sc.dither.kind = DitherSpec::Kind::uniform;
  else f.fail("dither_kind", "dither_kind must be none or uniform");
  if (f.has("dither_upper_s") && f.has("dither_upper_periods"))
    f.fail("dither_upper_periods", "give either dither_upper_s or dither_upper_periods");
  if (auto v = f.number("dither_upper_s")) sc.dither.upper = non_negative(f, "dither_upper_s", *v);
  if (auto v = f.number("dither_upper_periods"))
    sc.dither.upper = non_negative(f, "dither_upper_periods", *v) * sc.alice.clock.period();
  if (sc.dither.kind == DitherSpec::Kind::uniform && !f.has("dither_upper_s") &&
      !f.has("dither_upper_periods"))
    sc.dither.upper = sc.alice.clock.period();

  sc.start_time = non_negative(f, "start_s", f.number("start_s").value_or(0.0));
  sc.gap = non_negative(f, "gap_s", f.number("gap_s").value_or(0.0));

  SearchGrid& g = rc.grid;
  g.f_lo = f.number("grid_f_lo_hz").value_or(g.f_lo);
  g.f_hi = f.number("grid_f_hi_hz").value_or(g.f_hi);
  g.df = f.number("grid_df_hz").value_or(g.df);
  if (f.has("grid_phi_steps") && f.has("grid_dphi_rad"))
    f.fail("grid_dphi_rad", "give either grid_phi_steps or grid_dphi_rad");
  if (auto v = f.count("grid_phi_steps")) {
    if (*v == 0) f.fail("grid_phi_steps", "grid_phi_steps must be positive");
    g.dphi = kTwoPi / static_cast<double>(*v);
  }
  g.dphi = f.number("grid_dphi_rad").value_or(g.dphi);
  g.refine = static_cast<int>(f.count("grid_refine").value_or(10));
  if (auto v = f.text("estimator")) {
    if (*v == "wrapped") g.objective = Objective::wrapped;
    else if (*v == "least_squares") g.objective = Objective::least_squares;
    else f.fail("estimator", "estimator must be wrapped or least_squares");
  }
  try {
    g.validate();
  } catch (const invalid_argument& e) {
    throw config_error(f.source(), f.line("grid_f_lo_hz"), e.what());
  }
  rc.eve_grid.grid = g;
  // Eve knows the nominal rate; she searches +-5% of its period in 1% steps.
  rc.eve_grid.T_lo = f.number("eve_grid_t_lo_s").value_or(0.95 / f0);
  rc.eve_grid.T_hi = f.number("eve_grid_t_hi_s").value_or(1.05 / f0);
  rc.eve_grid.dT = f.number("eve_grid_dt_s").value_or(0.01 / f0);

  if (auto v = f.number("t_test_s")) rc.t_test = *v;

  BudgetInputs& b = rc.budget;
  b.ppm = f.number("budget_ppm").value_or(b.ppm);
  b.f0 = f.number("budget_f0_hz").value_or(b.f0);
  b.df_bin = f.number("budget_df_bin_hz").value_or(b.df_bin);
  b.f_min = f.number("budget_f_min_hz").value_or(b.f_min);
  b.f_max = f.number("budget_f_max_hz").value_or(b.f_max);
  b.phi_res = f.number("budget_phi_res_rad").value_or(b.phi_res);
  b.rho_range = f.number("budget_rho_range_m").value_or(b.rho_range);
  b.rho_res = f.number("budget_rho_res_m").value_or(b.rho_res);

  rc.detect_k_sigma = positive(f, "detect_k_sigma", f.number("detect_k_sigma").value_or(4.0));
  rc.detect_trim = non_negative(f, "detect_trim", f.number("detect_trim").value_or(0.05));
  if (auto v = f.text("injection")) {
    if (*v == "none") rc.injection = InjectionKind::none;
    else if (*v == "random") rc.injection = InjectionKind::random_timing;
    else if (*v == "oracle") rc.injection = InjectionKind::oracle_perfect;
    else f.fail("injection", "injection must be none, random or oracle");
  }
  rc.injection_count = static_cast<std::size_t>(f.count("injection_count").value_or(1));

  f.reject_unused();
  try {
    sc.validate();
  } catch (const invalid_argument& e) {
    throw config_error(f.source(), 0, e.what());
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path,
                                 std::optional<std::uint64_t> seed_override = std::nullopt) {
  return load_run_config(KeyValueFile::load(path), seed_override);
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepSpec {
  std::string base_config;  // resolved path
  std::string param;
  std::vector<double> values;
  std::size_t trials = 1;
  std::uint64_t seed_base = 1;
  NodeId role = NodeId::alice;

  void validate() const {
    if (values.empty()) throw invalid_argument("sweep has no values");
    if (trials < 1) throw invalid_argument("sweep needs at least one trial");
  }
};

inline const std::vector<std::string>& sweep_params() {
  static const std::vector<std::string> names{"f_d_hz", "dither_upper_ta", "n_pings",
                                              "sigma_j_s", "sigma_c_s", "rho_ab_m"};
  return names;
}

inline SweepSpec load_sweep(const std::string& path) {
  const KeyValueFile f = KeyValueFile::load(path);
  SweepSpec s;
  auto base = f.text("base_config");
  if (!base) throw config_error(path, 0, "missing base_config");
  std::filesystem::path bp(*base);
  if (bp.is_relative()) bp = std::filesystem::path(path).parent_path() / bp;
  s.base_config = bp.string();

  auto param = f.text("param");
  if (!param) throw config_error(path, 0, "missing param");
  bool known = false;
  for (const auto& n : sweep_params()) known = known || n == *param;
  if (!known) f.fail("param", "unknown sweep parameter '" + *param + "'");
  s.param = *param;

  if (f.has("values") && f.has("values_logspace"))
    f.fail("values_logspace", "give either values or values_logspace");
  s.values = f.numbers("values");
  if (f.has("values_logspace")) {
    const auto ls = f.numbers("values_logspace");
    if (ls.size() != 3 || !(ls[0] > 0.0) || !(ls[1] > 0.0) || ls[2] < 1.0 ||
        ls[2] != std::floor(ls[2]))
      f.fail("values_logspace", "values_logspace needs lo, hi, count with lo, hi > 0");
    const auto n = static_cast<std::size_t>(ls[2]);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
      s.values.push_back(std::exp(std::log(ls[0]) + t * (std::log(ls[1]) - std::log(ls[0]))));
    }
  }
  if (s.values.empty()) throw config_error(path, 0, "sweep has no values");
  s.trials = static_cast<std::size_t>(f.count("trials").value_or(1));
  if (s.trials < 1) f.fail("trials", "trials must be at least 1");
  s.seed_base = f.count("seed_base").value_or(1);
  if (auto r = f.text("role")) {
    if (*r == "alice") s.role = NodeId::alice;
    else if (*r == "bob") s.role = NodeId::bob;
    else if (*r == "eve") s.role = NodeId::eve;
    else f.fail("role", "role must be alice, bob or eve");
  }
  f.reject_unused();
  return s;
}

// Applies one swept value to a loaded scenario.
inline void apply_sweep_value(RunConfig& rc, const std::string& param, double value) {
  ScenarioConfig& sc = rc.scenario;
  if (param == "f_d_hz") {
    sc.alice.clock.delta_f = sc.bob.clock.delta_f + value;
  } else if (param == "dither_upper_ta") {
    if (value < 0.0) throw invalid_argument("dither fraction must be non-negative");
    sc.dither.kind = value > 0.0 ? DitherSpec::Kind::uniform : DitherSpec::Kind::none;
    sc.dither.upper = value * sc.alice.clock.period();
  } else if (param == "n_pings") {
    if (value < 2.0 || value != std::floor(value)) throw invalid_argument("n_pings must be an integer >= 2");
    sc.consts.N = static_cast<std::size_t>(value);
  } else if (param == "sigma_j_s") {
    sc.noise.sigma_j = value;
    sc.alice.clock.sigma_j = sc.bob.clock.sigma_j = value;
    if (sc.eve) sc.eve->clock.sigma_j = value;
  } else if (param == "sigma_c_s") {
    sc.noise.sigma_c = value;
  } else if (param == "rho_ab_m") {
    sc.geometry.rho_ab = value;
  } else {
    throw invalid_argument("unknown sweep parameter '" + param + "'");
  }
  sc.validate();
}

}  // namespace climex
