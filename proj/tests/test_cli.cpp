#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int status;
  std::string output;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(CACC_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int raw = pclose(pipe);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cacc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_config("short.json", {{"duration", 5.0}});
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_config(const std::string& name, const json& j) {
    const auto p = dir_ / name;
    std::ofstream(p) << j.dump();
    return p.string();
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  static json read_json(const std::string& p) { return json::parse(std::ifstream(p)); }

  fs::path dir_;
};

std::vector<std::string> data_lines(const std::string& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);)
    if (!l.empty() && l[0] != '#') lines.push_back(l);
  return lines;
}

}  // namespace

TEST_F(Cli, RunWritesTraceAndMetrics) {
  const auto r = cli("run --config " + path("short.json") + " --out " + path("run") + " --seed 4");
  ASSERT_EQ(r.status, 0) << r.output;
  const auto m = read_json(path("run/metrics.json"));
  EXPECT_EQ(m["schema"], "cacc-metrics/1");
  EXPECT_EQ(m["seed"], 4);
  EXPECT_EQ(m["config"]["seed"], 4);
  EXPECT_TRUE(m["metrics"].contains("mean_comm_rate"));
  std::ifstream trace(path("run/trace.csv"));
  std::string first;
  std::getline(trace, first);
  EXPECT_EQ(first, "# schema=cacc-trace/1");
  EXPECT_EQ(data_lines(path("run/trace.csv")).size(), 1u + 10u * 50u);
}

TEST_F(Cli, RunIsBitReproducible) {
  ASSERT_EQ(cli("run --config " + path("short.json") + " --per 0.6 --out " + path("a")).status, 0);
  ASSERT_EQ(cli("run --config " + path("short.json") + " --per 0.6 --out " + path("b")).status, 0);
  std::stringstream a, b;
  a << std::ifstream(path("a/trace.csv")).rdbuf();
  b << std::ifstream(path("b/trace.csv")).rdbuf();
  EXPECT_EQ(a.str(), b.str());
}

TEST_F(Cli, MissingConfigFileNamesPath) {
  const auto r = cli("run --config " + path("nope.json") + " --out " + path("x"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find(path("nope.json")), std::string::npos) << r.output;
}

TEST_F(Cli, BadDurationNamesField) {
  const auto cfg = write_config("bad.json", {{"duration", 5.05}});
  const auto r = cli("run --config " + cfg + " --out " + path("x"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("duration"), std::string::npos) << r.output;
}

TEST_F(Cli, SweepWritesOneRowPerThreshold) {
  const auto r = cli("sweep --config " + path("short.json") + " --runs 1 --out " + path("s"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto lines = data_lines(path("s/sweep.csv"));
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0].rfind("threshold,runs,comm_rate", 0), 0u);
  EXPECT_EQ(read_json(path("s/sweep.json"))["rows"].size(), 6u);
}

TEST_F(Cli, SingleThresholdSweepEqualsRun) {
  ASSERT_EQ(cli("sweep --config " + path("short.json") + " --thresholds 450 --runs 1 --out " + path("s")).status, 0);
  const auto cfg = write_config("b450.json", {{"duration", 5.0}, {"policy", {{"threshold", 450}}}});
  ASSERT_EQ(cli("run --config " + cfg + " --out " + path("r")).status, 0);
  const auto sweep = read_json(path("s/sweep.json"))["rows"][0];
  const auto run = read_json(path("r/metrics.json"))["metrics"];
  EXPECT_EQ(sweep["comm_rate"]["mean"], run["mean_comm_rate"]);
  EXPECT_EQ(sweep["spacing_error"]["mean"], run["mean_spacing_error"]);
  EXPECT_EQ(sweep["speed_difference"]["mean"], run["mean_speed_difference"]);
}

TEST_F(Cli, EmptyThresholdListIsUsageError) {
  const auto r = cli("sweep --config " + path("short.json") + " --thresholds --out " + path("s"));
  EXPECT_NE(r.status, 0);
  EXPECT_FALSE(fs::exists(path("s/sweep.csv")));
}

TEST_F(Cli, BaselineRates) {
  const auto r = cli("baseline --config " + path("short.json") + " --runs 3 --out " + path("b"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto b = read_json(path("b/baseline.json"))["baselines"];
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0]["per"], 0.0);
  EXPECT_EQ(b[0]["comm_rate"]["mean"], 10.0);
  EXPECT_EQ(b[1]["per"], 0.6);
  EXPECT_EQ(b[1]["comm_rate"]["mean"], 10.0);
  EXPECT_NEAR(b[1]["delivery_rate"]["mean"].get<double>(), 4.0, 0.4);
}

TEST_F(Cli, CompareReportsReduction) {
  const auto r = cli("compare --config " + path("short.json") + " --runs 1 --out " + path("c"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto c = read_json(path("c/compare.json"));
  ASSERT_TRUE(c.contains("comm_rate_reduction_percent"));
  EXPECT_GT(c["comm_rate_reduction_percent"].get<double>(), 0.0);
  EXPECT_EQ(c["schema"], "cacc-metrics/1");
  EXPECT_TRUE(c.contains("config"));
}

TEST_F(Cli, UnknownModeRejected) {
  EXPECT_NE(cli("run --mode sometimes --out " + path("x")).status, 0);
}
