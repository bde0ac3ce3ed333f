#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

#ifndef PURCELL_CLI_PATH
#error "PURCELL_CLI_PATH must name the purcell executable"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / ("purcell_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  CliResult invoke(const std::string& args) const {
    const auto out = root_ / "stdout.txt";
    const auto err = root_ / "stderr.txt";
    const std::string cmd = std::string("'") + PURCELL_CLI_PATH + "' " + args + " >'" + out.string() + "' 2>'" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path write_config(const std::string& name, const std::string& text) const {
    const auto p = root_ / name;
    spit(p, text);
    return p;
  }

  fs::path root_;
};

const char* kTinySweep = R"({
  "model": {"n_ions": 4, "n_traj": 2, "t_pulse": 200, "t_decay": 100},
  "simulation": {"fit_window_start": 10},
  "survival": {"time": 50, "n_bins": 4},
  "sweep": {"run_id": "tiny", "flux_list": [0.01, 16], "detuning_min": -1, "detuning_max": 1,
            "detuning_points": 5, "write_traces": true}
}
)";

}  // namespace

TEST_F(CliTest, MissingConfigNamesThePath) {
  const auto missing = (root_ / "absent.json").string();
  const auto r = invoke("sweep -c '" + missing + "' -o '" + (root_ / "out").string() + "'");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root_ / "out"));
}

TEST_F(CliTest, UnknownConfigKeyIsRejectedWithLocation) {
  const auto cfg = write_config("bad.json", "{\n  \"sweep\": {\n    \"flux_lst\": [1]\n  }\n}\n");
  const auto r = invoke("sweep --dry-run -c '" + cfg.string() + "'");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("bad.json:3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("sweep.flux_lst"), std::string::npos) << r.err;
}

TEST_F(CliTest, BadUsageExitsWithOne) {
  EXPECT_EQ(invoke("").exit_code, 1);
  EXPECT_EQ(invoke("frobnicate").exit_code, 1);
  EXPECT_EQ(invoke("sweep --set nonsense").exit_code, 1);
  EXPECT_EQ(invoke("--help").exit_code, 0);
}

TEST_F(CliTest, DryRunWritesNothing) {
  const auto cfg = write_config("tiny.json", kTinySweep);
  const auto out = root_ / "dry";
  const auto r = invoke("sweep --dry-run -c '" + cfg.string() + "' -o '" + out.string() + "'");
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("2 fluxes x 5 detunings = 10 points"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, RepeatedSweepsAreByteIdentical) {
  const auto cfg = write_config("tiny.json", kTinySweep);
  const auto a = root_ / "a";
  const auto b = root_ / "b";
  const auto ra = invoke("sweep -t 1 -c '" + cfg.string() + "' -o '" + a.string() + "'");
  const auto rb = invoke("sweep -t 3 -c '" + cfg.string() + "' -o '" + b.string() + "'");
  ASSERT_EQ(ra.exit_code, rb.exit_code) << ra.err << rb.err;
  ASSERT_NE(ra.exit_code, 1) << ra.err;

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  EXPECT_GE(files.size(), 6u + 20u);
  for (const auto& rel : files) {
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    if (rel == "manifest.json") continue;
    EXPECT_EQ(slurp(a / rel), slurp(b / rel)) << rel;
  }
  auto ma = json::parse(slurp(a / "manifest.json"));
  auto mb = json::parse(slurp(b / "manifest.json"));
  EXPECT_EQ(ma["complete"], true);
  ma.erase("wall_time_seconds");
  mb.erase("wall_time_seconds");
  EXPECT_EQ(ma, mb);
  EXPECT_FALSE(fs::exists(a / ".purcell.lock"));

  const auto c = root_ / "c";
  const auto rc = invoke("sweep --replay '" + (a / "manifest.json").string() + "' -o '" + c.string() + "'");
  ASSERT_EQ(rc.exit_code, ra.exit_code) << rc.err;
  for (const char* name : {"fig3b.csv", "fig4b.csv", "flux_fits.csv", "saturation.csv", "survival.csv"})
    EXPECT_EQ(slurp(a / name), slurp(c / name)) << name;
}

TEST_F(CliTest, SeedChangesTheRun) {
  const auto cfg = write_config("tiny.json", kTinySweep);
  const auto a = root_ / "a";
  const auto b = root_ / "b";
  invoke("sample -c '" + cfg.string() + "' -o '" + a.string() + "'");
  invoke("sample --seed 7 -c '" + cfg.string() + "' -o '" + b.string() + "'");
  const auto ra = slurp(a / "realizations.csv");
  const auto rb = slurp(b / "realizations.csv");
  EXPECT_EQ(ra.substr(0, ra.find('\n')), "realization_index,ion_index,delta_j,g_j");
  EXPECT_NE(ra, rb);
}

TEST_F(CliTest, KilledSweepLeavesAnIncompleteManifest) {
  const auto out = root_ / "killed";
  const pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    const int devnull = ::open("/dev/null", O_WRONLY);
    ::dup2(devnull, 1);
    ::dup2(devnull, 2);
    ::execl(PURCELL_CLI_PATH, PURCELL_CLI_PATH, "sweep", "-t", "1", "-o", out.c_str(), "--set", "model.n_ions=10",
            "model.n_traj=4", "model.t_decay=100", "simulation.fit_window_start=10", "survival.time=50",
            "sweep.detuning_points=11", "sweep.flux_list=[0.01,0.1,1,4,16,64]", static_cast<char*>(nullptr));
    ::_exit(127);
  }
  const auto manifest = out / "manifest.json";
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(120);
  while (!fs::exists(manifest) && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFSIGNALED(status)) << "sweep finished before it could be interrupted";
  ASSERT_TRUE(fs::exists(manifest));
  const auto m = json::parse(slurp(manifest));
  EXPECT_EQ(m["complete"], false);
  EXPECT_GE(m["points"].size(), 22u);
  EXPECT_LT(m["points"].size(), 132u);
  for (const auto& f : m["files"]) EXPECT_TRUE(fs::exists(out / f.get<std::string>())) << f;

  // a leftover lock from a dead process does not block the next run
  const auto r = invoke("sample -o '" + out.string() + "' --set model.n_traj=1");
  EXPECT_EQ(r.exit_code, 0) << r.err;
}

TEST_F(CliTest, UnknownFitModelListsValidOnes) {
  const auto data = root_ / "d.csv";
  spit(data, "time_ns,counts\n0,10\n1,5\n");
  const auto r = invoke("fit -i '" + data.string() + "' -m cubic -o -");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("unknown fit model 'cubic'"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("double_lorentzian"), std::string::npos) << r.err;
}

TEST_F(CliTest, ExponentialFitMatchesGolden) {
  std::ostringstream csv;
  csv.precision(17);
  csv << "time_ns,counts\n";
  for (int i = 0; i <= 100; ++i) csv << i << ',' << 2000.0 * std::exp(-0.05 * i) << '\n';
  const auto data = root_ / "decay.csv";
  spit(data, csv.str());
  const auto r = invoke("fit -i '" + data.string() + "' -m exponential --gamma0 0.01 --window 5 80 -o -");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto got = json::parse(r.out);
  const auto golden = json::parse(R"({
    "model": "exponential",
    "parameters": [
      {"name": "c", "value": 2000.0, "error": 0.0, "at_bound": false},
      {"name": "Gamma", "value": 0.05, "error": 0.0, "at_bound": false}
    ],
    "error_method": "diagonal covariance",
    "derived": {"Gamma": 0.05, "purcell_ratio": 5.0},
    "residual_norm": 0.0,
    "converged": true,
    "window": [5.0, 80.0],
    "input": "decay.csv",
    "abscissa_unit": "ns",
    "weighting": "unweighted"
  })");
  for (const auto& [key, value] : golden.items()) {
    ASSERT_TRUE(got.contains(key)) << key;
    if (key == "parameters") {
      ASSERT_EQ(got[key].size(), value.size());
      for (std::size_t i = 0; i < value.size(); ++i) {
        EXPECT_EQ(got[key][i]["name"], value[i]["name"]);
        EXPECT_EQ(got[key][i]["at_bound"], value[i]["at_bound"]);
        EXPECT_NEAR(got[key][i]["value"].get<double>(), value[i]["value"].get<double>(),
                    1e-9 * value[i]["value"].get<double>());
        EXPECT_LT(got[key][i]["error"].get<double>(), 1e-6);
      }
    } else if (key == "derived") {
      for (const auto& [name, v] : value.items()) EXPECT_NEAR(got[key][name].get<double>(), v.get<double>(), 1e-9) << name;
    } else if (key == "residual_norm") {
      EXPECT_LT(got[key].get<double>(), 1e-6);
    } else {
      EXPECT_EQ(got[key], value) << key;
    }
  }
  EXPECT_TRUE(got.contains("iterations"));
  EXPECT_TRUE(got.contains("message"));
}

TEST_F(CliTest, FitWritesToOutputDirectory) {
  const auto data = root_ / "p.csv";
  std::ostringstream csv;
  csv.precision(17);
  csv << "flux,intensity\n";
  for (double phi : {0.01, 0.1, 1.0, 10.0, 100.0, 1000.0}) csv << phi << ',' << 3.0 * phi / (phi + 10.0) << '\n';
  spit(data, csv.str());
  const auto out = root_ / "fitout";
  const auto r = invoke("fit -i '" + data.string() + "' -m ple -o '" + out.string() + "'");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto j = json::parse(slurp(out / "fit.json"));
  EXPECT_EQ(j["model"], "ple");
  EXPECT_TRUE(j["converged"].get<bool>());
}

TEST_F(CliTest, OracleRefusesMoreThanTwoIons) {
  const auto r = invoke("oracle --set model.n_ions=3 -o '" + (root_ / "o").string() + "'");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("at most 2 ions"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root_ / "o" / "oracle.csv"));
}

TEST_F(CliTest, OracleAgreesAtWeakDrive) {
  const auto out = root_ / "o";
  const auto r = invoke("oracle --set model.n_ions=1 model.t_pulse=200 model.t_decay=50 survival.time=20 simulation.fit_window_start=10 point.flux=1e-6 -o '" +
                     out.string() + "'");
  EXPECT_EQ(r.exit_code, 0) << r.out << r.err;
  const auto summary = json::parse(slurp(out / "oracle_summary.json"));
  EXPECT_LT(summary["max_rel_dev_abs_a"].get<double>(), 0.05);
  const auto csv = slurp(out / "oracle.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "time,oracle_abs_a,mean_field_abs_a,oracle_s_z_0,mean_field_s_z_0,rel_dev_abs_a,rel_dev_s_z,"
            "max_relative_deviation,trace,min_eigenvalue");
}

TEST_F(CliTest, SimulateWritesTraceAndFit) {
  const auto out = root_ / "sim";
  const auto r = invoke("simulate --set model.n_ions=4 model.n_traj=2 model.t_pulse=200 model.t_decay=100 "
                     "simulation.fit_window_start=10 survival.time=50 point.flux=1 point.model=local -o '" + out.string() + "'");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto j = json::parse(slurp(out / "fit.json"));
  EXPECT_EQ(j["simulation_model"], "local");
  EXPECT_GT(j["gamma"].get<double>(), 0.0);
  EXPECT_EQ(slurp(out / "trace.csv").substr(0, 10), "time,flux\n");
}
