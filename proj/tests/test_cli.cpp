// Black-box tests of the dda executable.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / ("dda_cli_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = std::string(DDA_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  fs::remove(log);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("dda_cli_test_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  static std::string config(const std::string& name) { return std::string(DDA_CONFIG_DIR) + "/" + name; }

  fs::path dir_;
};

const char* kSmall = R"({
  "seed": 5,
  "problem": { "agents": 3, "x_star": [1.0, 2.0], "tilt": [1.0, -0.5] },
  "polyhedron": { "B": [[-2.0, 1.0]], "b": [0.0], "C": [[1.0, 0.0], [0.0, -1.0]], "c": [5.0, 0.0] },
  "scheme": { "kind": "pairwise", "graph": "complete" },
  "schedule": { "a": 5.0, "alpha_exp": 0.67 },
  "steps": 50,
  "n_runs": 4
})";

}  // namespace

TEST_F(Cli, RunIsByteIdenticalAcrossReruns) {
  const std::string args = "run --config " + config("estimation_broadcast.json") + " --steps 200 --seed 42 --out ";
  ASSERT_EQ(run(args + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run(args + (dir_ / "b").string()).code, 0);
  const std::string a = slurp(dir_ / "a" / "trajectory.csv");
  // out differs between the two runs, so compare everything after the config echo.
  const std::string b = slurp(dir_ / "b" / "trajectory.csv");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a.substr(a.find("\n# seed")), b.substr(b.find("\n# seed")));
  EXPECT_NE(a.find("# seed: 42"), std::string::npos);
}

TEST_F(Cli, SameOutputDirReproducesEveryArtifact) {
  const fs::path cfg = write_config("small.json", kSmall);
  const std::string args = "montecarlo --config " + cfg.string() + " --out " + (dir_ / "o").string();
  ASSERT_EQ(run(args).code, 0);
  const std::string r1 = slurp(dir_ / "o" / "report.json"), s1 = slurp(dir_ / "o" / "samples.csv"),
                    h1 = slurp(dir_ / "o" / "histogram.csv"), m1 = slurp(dir_ / "o" / "manifest.json");
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(r1, slurp(dir_ / "o" / "report.json"));
  EXPECT_EQ(s1, slurp(dir_ / "o" / "samples.csv"));
  EXPECT_EQ(h1, slurp(dir_ / "o" / "histogram.csv"));
  EXPECT_EQ(m1, slurp(dir_ / "o" / "manifest.json"));
  const auto report = nlohmann::json::parse(r1);
  EXPECT_EQ(report["n_runs"], 4);
  EXPECT_EQ(report["seed"], 5);
}

TEST_F(Cli, ZeroStepsWritesHeaderOnly) {
  const fs::path cfg = write_config("small.json", kSmall);
  const Result r = run("run --config " + cfg.string() + " --steps 0 --out " + (dir_ / "z").string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream lines(slurp(dir_ / "z" / "trajectory.csv"));
  int data = 0;
  for (std::string l; std::getline(lines, l);)
    if (l.rfind("#", 0) != 0) ++data;
  EXPECT_EQ(data, 1);
}

TEST_F(Cli, SectionFiveRunHasThousandRecords) {
  const Result r = run("run --config " + config("estimation_broadcast.json") + " --out " + (dir_ / "s").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("1000 records"), std::string::npos) << r.output;
  std::istringstream lines(slurp(dir_ / "s" / "trajectory.csv"));
  int data = 0;
  for (std::string l; std::getline(lines, l);)
    if (l.rfind("#", 0) != 0) ++data;
  EXPECT_EQ(data, 1 + 1000 * 51);
}

TEST_F(Cli, MixingOnK3) {
  std::string text = kSmall;
  const fs::path cfg = write_config("k3.json", text);
  ASSERT_EQ(run("mixing --config " + cfg.string() + " --out " + (dir_ / "m").string()).code, 0);
  auto j = nlohmann::json::parse(slurp(dir_ / "m" / "mixing.json"));
  EXPECT_NEAR(j["rho"].get<double>(), 0.5, 1e-12);
  ASSERT_EQ(run("mixing --config " + cfg.string() + " --scheme broadcast --out " + (dir_ / "b").string()).code, 0);
  j = nlohmann::json::parse(slurp(dir_ / "b" / "mixing.json"));
  EXPECT_FALSE(j["doubly_stochastic_always"].get<bool>());
  EXPECT_TRUE(j["column_stochastic_in_mean"].get<bool>());
  EXPECT_TRUE(j["row_stochastic"].get<bool>());
}

TEST_F(Cli, CheckFlagsStepSizeExponent) {
  std::string text = kSmall;
  text.replace(text.find("0.67"), 4, "0.5");
  const fs::path cfg = write_config("slow.json", text);
  const Result r = run("check --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("[warn] Assumption 8 (stronger conditions on step-size)"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("[pass] Assumption 7 (stronger conditions on weight matrix)"), std::string::npos) << r.output;
}

TEST_F(Cli, CheckWarnsOnDegenerateOptimum) {
  const Result r = run("check --config " + config("convergence.json"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("[warn] Assumption B (constraint qualification)"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("degenerate"), std::string::npos);
  const Result tilted = run("check --config " + config("estimation_pairwise.json"));
  EXPECT_NE(tilted.output.find("[pass] Assumption B (constraint qualification)"), std::string::npos) << tilted.output;
}

TEST_F(Cli, DisconnectedGraphIsConfigError) {
  std::string text = kSmall;
  text.replace(text.find("\"complete\""), 10, "[[1, 2]]");
  const fs::path cfg = write_config("split.json", text);
  const Result r = run("check --config " + cfg.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("disconnected"), std::string::npos) << r.output;
}

TEST_F(Cli, SyntaxErrorIsLinePrecise) {
  std::string text = kSmall;
  text.replace(text.find("\"steps\": 50,"), 12, "\"steps\": 50 50,");
  const fs::path cfg = write_config("broken.json", text);
  const Result r = run("run --config " + cfg.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("broken.json:7:"), std::string::npos) << r.output;
}

TEST_F(Cli, MissingFileAndBadFlagsExitOne) {
  EXPECT_EQ(run("run --config " + (dir_ / "nope.json").string()).code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("run").code, 1);
}

TEST_F(Cli, NumericalFailureExitsTwo) {
  // Regressors carry no information along ker(B): the asymptotic model's G is singular.
  const std::string text = R"({
  "seed": 1,
  "problem": { "agents": 1, "x_star": [1.0, 2.0], "R_u": [[[0.8, -0.4], [-0.4, 0.2]]], "sigma_v2": [1.0] },
  "polyhedron": { "B": [[-2.0, 1.0]], "b": [0.0], "C": [[1.0, 0.0], [0.0, -1.0]], "c": [5.0, 0.0] },
  "scheme": { "kind": "fixed", "matrix": "averaging" },
  "schedule": { "a": 5.0, "alpha_exp": 0.67 },
  "steps": 10,
  "n_runs": 2
})";
  const fs::path cfg = write_config("flat.json", text);
  const Result r = run("montecarlo --config " + cfg.string() + " --out " + (dir_ / "f").string());
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST_F(Cli, RateProbeWritesReport) {
  const fs::path cfg = write_config("small.json", kSmall);
  const Result r = run("rate-probe --config " + cfg.string() + " --steps 400 --runs 2 --out " + (dir_ / "r").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(dir_ / "r" / "rate_probe.json"));
  EXPECT_EQ(j["n_reps"], 2);
}
