#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "climex/config.hpp"

using namespace climex;
namespace fs = std::filesystem;

namespace {

RunConfig from_text(const std::string& text, std::optional<std::uint64_t> seed = std::nullopt) {
  std::istringstream in(text);
  return load_run_config(KeyValueFile::parse(in, "mem.cfg"), seed);
}

// Line number carried by the config_error thrown for `text`.
std::size_t error_line(const std::string& text) {
  try {
    from_text(text);
  } catch (const config_error& e) {
    return e.line();
  }
  ADD_FAILURE() << "no config_error for:\n" << text;
  return 9999;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("climex_cfg_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }
  fs::path dir_;
};

const char* kMinimal =
    "seed = 4\n"
    "df_a_hz = 120\n"
    "df_b_hz = -30\n"
    "n_pings = 500\n"
    "protocol = rtt\n";

}  // namespace

TEST(ConfigParse, DefaultsAndUnits) {
  const RunConfig rc = from_text(kMinimal);
  const ScenarioConfig& s = rc.scenario;
  EXPECT_EQ(s.seed, 4u);
  EXPECT_DOUBLE_EQ(s.alice.clock.frequency(), 100e6 + 120.0);
  EXPECT_DOUBLE_EQ(s.bob.clock.frequency(), 100e6 - 30.0);
  EXPECT_EQ(s.consts.N, 500u);
  EXPECT_DOUBLE_EQ(s.consts.T_m, 1e-4);
  EXPECT_EQ(s.protocol, Protocol::rtt);
  EXPECT_FALSE(s.eve.has_value());
  EXPECT_EQ(rc.grid.objective, Objective::wrapped);
  EXPECT_DOUBLE_EQ(rc.eve_grid.T_lo, 0.95e-8);
  EXPECT_DOUBLE_EQ(rc.eve_grid.T_hi, 1.05e-8);
  EXPECT_GE(s.alice.clock_phase, 0.0);
  EXPECT_LT(s.alice.clock_phase, kTwoPi);
}

TEST(ConfigParse, PpmOffsetsAndComments) {
  const RunConfig rc = from_text(
      "# header\n"
      "ppm_a = 2.5   # trailing\n"
      "\n"
      "ppm_b = -1\n"
      "estimator = least_squares\n");
  EXPECT_DOUBLE_EQ(rc.scenario.alice.clock.delta_f, 250.0);
  EXPECT_DOUBLE_EQ(rc.scenario.bob.clock.delta_f, -100.0);
  EXPECT_EQ(rc.grid.objective, Objective::least_squares);
}

TEST(ConfigParse, EveAppearsWithHerKeys) {
  const RunConfig rc = from_text("df_e_hz = 7\nrho_ae_m = 3\nrho_be_m = 4\nrho_ab_m = 5\n");
  ASSERT_TRUE(rc.scenario.eve.has_value());
  EXPECT_DOUBLE_EQ(rc.scenario.eve->clock.delta_f, 7.0);
  EXPECT_DOUBLE_EQ(rc.scenario.geometry.eve_constant(), 6.0);
}

TEST(ConfigParse, DitherUpperInPeriods) {
  const RunConfig rc = from_text("protocol = climex\ndither_upper_periods = 0.5\n");
  EXPECT_EQ(rc.scenario.dither.kind, DitherSpec::Kind::uniform);
  EXPECT_DOUBLE_EQ(rc.scenario.dither.upper, 0.5 * rc.scenario.alice.clock.period());
}

TEST(ConfigParse, SeedOverrideAndPhaseDraws) {
  const RunConfig a = from_text(kMinimal, 99);
  const RunConfig b = from_text(kMinimal, 99);
  EXPECT_EQ(a.scenario.seed, 99u);
  EXPECT_EQ(a.scenario.bob.clock_phase, b.scenario.bob.clock_phase);
  EXPECT_NE(from_text(kMinimal, 100).scenario.bob.clock_phase, a.scenario.bob.clock_phase);
}

TEST(ConfigErrors, ReportTheOffendingLine) {
  EXPECT_EQ(error_line("seed = 1\nbogus_key = 3\n"), 2u);
  EXPECT_EQ(error_line("seed = 1\n\nseed = 2\n"), 3u);
  EXPECT_EQ(error_line("n_pings = 10\nrho_ab_m = abc\n"), 2u);
  EXPECT_EQ(error_line("protocol = tcp\n"), 1u);
  EXPECT_EQ(error_line("# c\njust text\n"), 2u);
  EXPECT_EQ(error_line("n_pings = -3\n"), 1u);
  EXPECT_EQ(error_line("n_pings = 1\n"), 1u);
  EXPECT_EQ(error_line("df_a_hz = 1\nppm_a = 1\n"), 1u);
  EXPECT_EQ(error_line("x =\n"), 1u);
  EXPECT_EQ(error_line("phase_a_rad = 7\n"), 1u);
  EXPECT_EQ(error_line("sigma_j_s = -1e-9\n"), 1u);
}

TEST(ConfigErrors, MessageNamesFileAndLine) {
  try {
    from_text("seed = 1\nwhat = 2\n");
    FAIL();
  } catch (const config_error& e) {
    EXPECT_NE(std::string(e.what()).find("mem.cfg:2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("what"), std::string::npos);
  }
}

TEST_F(TempDir, MissingFileIsAConfigError) {
  EXPECT_THROW(load_run_config((dir_ / "nope.cfg").string()), config_error);
}

TEST_F(TempDir, SweepLogspaceAndRelativeBase) {
  write("base.cfg", kMinimal);
  const std::string p = write("s.sweep",
                              "base_config = base.cfg\n"
                              "param = f_d_hz\n"
                              "values_logspace = 2, 1000, 5\n"
                              "trials = 3\n"
                              "seed_base = 40\n"
                              "role = bob\n");
  const SweepSpec s = load_sweep(p);
  ASSERT_EQ(s.values.size(), 5u);
  EXPECT_NEAR(s.values.front(), 2.0, 1e-12);
  EXPECT_NEAR(s.values.back(), 1000.0, 1e-9);
  EXPECT_NEAR(s.values[2], std::sqrt(2000.0), 1e-9);
  EXPECT_EQ(s.trials, 3u);
  EXPECT_EQ(s.seed_base, 40u);
  EXPECT_EQ(s.role, NodeId::bob);
  EXPECT_EQ(fs::path(s.base_config), dir_ / "base.cfg");
  EXPECT_NO_THROW(load_run_config(s.base_config));
}

TEST_F(TempDir, SweepErrors) {
  write("base.cfg", kMinimal);
  EXPECT_THROW(load_sweep(write("a.sweep", "base_config = base.cfg\nparam = colour\nvalues = 1\n")),
               config_error);
  EXPECT_THROW(load_sweep(write("b.sweep", "base_config = base.cfg\nparam = f_d_hz\n")),
               config_error);
  EXPECT_THROW(load_sweep(write("c.sweep",
                                "base_config = base.cfg\nparam = f_d_hz\nvalues = 1\n"
                                "values_logspace = 1, 2, 3\n")),
               config_error);
  EXPECT_THROW(load_sweep(write("d.sweep", "base_config = base.cfg\nparam = f_d_hz\nvalues = 1, x\n")),
               config_error);
  EXPECT_THROW(load_sweep(write("e.sweep", "param = f_d_hz\nvalues = 1\n")), config_error);
}

TEST(ApplySweep, EachParameter) {
  RunConfig rc = from_text(kMinimal);
  apply_sweep_value(rc, "f_d_hz", 333.0);
  EXPECT_NEAR(rc.scenario.alice.clock.frequency() - rc.scenario.bob.clock.frequency(), 333.0, 1e-6);
  apply_sweep_value(rc, "dither_upper_ta", 0.25);
  EXPECT_EQ(rc.scenario.dither.kind, DitherSpec::Kind::uniform);
  EXPECT_DOUBLE_EQ(rc.scenario.dither.upper, 0.25 * rc.scenario.alice.clock.period());
  apply_sweep_value(rc, "dither_upper_ta", 0.0);
  EXPECT_EQ(rc.scenario.dither.kind, DitherSpec::Kind::none);
  apply_sweep_value(rc, "n_pings", 64.0);
  EXPECT_EQ(rc.scenario.consts.N, 64u);
  apply_sweep_value(rc, "sigma_c_s", 3e-9);
  EXPECT_DOUBLE_EQ(rc.scenario.noise.sigma_c, 3e-9);
  apply_sweep_value(rc, "rho_ab_m", 12.0);
  EXPECT_DOUBLE_EQ(rc.scenario.geometry.rho_ab, 12.0);
  EXPECT_THROW(apply_sweep_value(rc, "n_pings", 2.5), invalid_argument);
  EXPECT_THROW(apply_sweep_value(rc, "volume", 1.0), invalid_argument);
}
