#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI and returns the exit code and stdout; stderr is discarded or merged.
Result run(const std::string& args, bool merge_stderr = false) {
  const std::string cmd = std::string(BSRLAB_CLI_PATH) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

Result run_with_stderr(const std::string& args) { return run(args, true); }

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bsrlab_cli_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Cli, VerifyErSuitePasses) {
  const auto r = run("verify er-suite");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["pass"].get<bool>());
  ASSERT_EQ(j["criteria"].size(), 4u);
  for (const auto& c : j["criteria"]) EXPECT_TRUE(c["pass"].get<bool>()) << c["summary"];
}

TEST(Cli, UnboundedRuleRejectedByTheory) {
  const auto r = run_with_stderr("ode tc --rule product");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("theory requires bounded-size rule"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run("simulate --no-such-flag").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("bp").code, 2);
  EXPECT_EQ(run("verify no-such-suite").code, 2);
  EXPECT_EQ(run("simulate --rule no-such-rule.json").code, 2);
  EXPECT_EQ(run("simulate --n 0.5").code, 2);
  EXPECT_EQ(run("report --experiment nothing").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, SimulateIsDeterministic) {
  const auto a = run("simulate --rule bf --n 1e6 --tmax 1.2 --seed 7");
  const auto b = run("simulate --rule bf --n 1e6 --tmax 1.2 --seed 7");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.rfind("t,L1,L2,Nomega,S2,N_1,", 0), 0u);
  EXPECT_EQ(a.out.find('\r'), std::string::npos);
  const auto c = run("simulate --rule bf --n 1e6 --tmax 1.2 --seed 8");
  EXPECT_NE(a.out, c.out);
}

TEST(Cli, SimulateWritesSidecar) {
  const auto dir = scratch_dir("sim");
  ASSERT_EQ(run("simulate --rule er4 --n 1000 --tmax 0.5 --dt 0.25 --seed 3 --out " + dir.string()).code, 0);
  std::ifstream meta(dir / "run.json");
  const auto j = nlohmann::json::parse(meta);
  EXPECT_EQ(j["seed"], 3);
  EXPECT_EQ(j["n"], 1000);
  EXPECT_TRUE(std::filesystem::exists(dir / "snapshots.csv"));
}

TEST(Cli, OdeCriticalTime) {
  const auto r = run("ode tc --rule er4");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["tc"].get<double>(), 0.5, 1e-4);
  for (const char* key : {"err", "S_max", "h"}) EXPECT_TRUE(j.contains(key));
}

TEST(Cli, SurvivalAndPmf) {
  const auto r = run("bp survival --rule er4 --t 0.6");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["rho"].get<double>(), 0.31369833, 1e-6);

  const auto p = run("bp pmf --rule er4 --t 0.45 --kmax 64");
  ASSERT_EQ(p.code, 0);
  EXPECT_EQ(p.out.rfind("t,k,p_k\n", 0), 0u);
  EXPECT_EQ(std::count(p.out.begin(), p.out.end(), '\n'), 65);
}

TEST(Cli, ExposureTrackThenSample) {
  const auto dir = scratch_dir("exposure");
  ASSERT_EQ(run("exposure track --rule bf --n 1e5 --seed 2 --out " + dir.string()).code, 0);
  const auto list = (dir / "parameter_list.json").string();
  const auto exact = run("exposure sample --list " + list + " --seed 1");
  ASSERT_EQ(exact.code, 0);
  EXPECT_EQ(nlohmann::json::parse(exact.out)["vertices"].get<double>(), 1e5);
  EXPECT_EQ(run("exposure sample --list " + list + " --seed 1").out, exact.out);
  EXPECT_EQ(run("exposure sample --list " + list + " --seed 1 --poissonized").code, 0);
}

TEST(Cli, EmptyPlanGivesNoRecords) {
  const auto r = run("report --experiment supercritical --rule er4 --n 1000");
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(nlohmann::json::parse(r.out).empty());
}

TEST(Cli, SkippedCellsAreReported) {
  const auto r = run("report --experiment subcritical --rule er4 --n 1000 --eps 0.05");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_TRUE(j[0]["skipped"].get<bool>());
}

TEST(Cli, RuleFilesMatchBuiltins) {
  const std::string dir = BSRLAB_RULES_DIR;
  const auto builtin = nlohmann::json::parse(run("ode tc --rule bf").out)["tc"].get<double>();
  for (const char* file : {"/bf.json", "/bf_compact.json"}) {
    const auto r = run("ode tc --rule " + dir + file);
    ASSERT_EQ(r.code, 0) << file;
    EXPECT_NEAR(nlohmann::json::parse(r.out)["tc"].get<double>(), builtin, 1e-12) << file;
  }
  EXPECT_EQ(run("simulate --rule " + dir + "/even.json --n 1000 --tmax 0.3 --seed 1").out,
            run("simulate --rule even --n 1000 --tmax 0.3 --seed 1").out);
}
