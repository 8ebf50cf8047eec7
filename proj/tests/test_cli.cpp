#include "bdtwine/cli.hpp"
#include "bdtwine/io.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace bdtwine;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Runs the installed binary through the shell; returns (exit code, stdout).
std::pair<int, std::string> run_binary(const std::string& args) {
  const std::string cmd = std::string(BDTWINE_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string text;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) text.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, text};
}

std::string temp_file(const std::string& name, const std::string& contents) {
  const auto path = std::filesystem::path(::testing::TempDir()) / name;
  std::ofstream(path) << contents;
  return path.string();
}

}  // namespace

TEST(Cli, SpectrumSingleState) {
  const auto path = temp_file("one.json", R"({"N": 1, "b": [1], "d": [0]})");
  const auto r = run({"spectrum", "--spec", path});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "{\"lambdas\":[1.0]}\n");
}

TEST(Cli, SpectrumIdentities) {
  const auto r = run({"spectrum", "--random-spec", "9", "3", "--check-identities"});
  EXPECT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["lambdas"].size(), 9u);
  EXPECT_TRUE(j["identities"]["pass"].get<bool>());
}

TEST(Cli, VerifyTwoStateExample) {
  const auto path = temp_file("two.json", R"({"N": 2, "b": [1, 1], "d": [1, 0]})");
  const auto r = run({"verify", "--spec", path});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_TRUE(j["pass"].get<bool>());
  for (const auto& c : j["checks"]) {
    const auto name = c["name"].get<std::string>();
    if (name.find("residual") != std::string::npos) EXPECT_LE(c["value"].get<double>(), 1e-10);
  }
}

TEST(Cli, VerifyRejectsZeroBirthRate) {
  const auto path = temp_file("bad.json", R"({"N": 2, "b": [1, 0], "d": [1, 0]})");
  const auto r = run({"verify", "--spec", path});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("positive"), std::string::npos);
  EXPECT_NE(r.err.find("b_2"), std::string::npos);
}

TEST(Cli, SchemaErrors) {
  EXPECT_EQ(run({"spectrum", "--spec", temp_file("a.json", R"({"N": 2, "b": [1]})")}).code, 2);
  EXPECT_EQ(run({"spectrum", "--spec", temp_file("b.json", R"({"b": [1]})")}).code, 2);
  EXPECT_EQ(run({"spectrum", "--spec", temp_file("c.json", "{not json")}).code, 2);
  EXPECT_EQ(run({"spectrum", "--spec", temp_file("d.json", R"({"N": 1, "b": ["x"]})")}).code, 2);
  EXPECT_EQ(run({"spectrum"}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"passage", "--random-spec", "3", "1", "--t-grid", "0:1"}).code, 2);
  EXPECT_EQ(run({"passage", "--random-spec", "3", "1", "--t-grid", "0:1:5", "--start", "4"}).code,
            2);
}

TEST(Cli, IoErrors) {
  EXPECT_EQ(run({"spectrum", "--spec", "/nonexistent/spec.json"}).code, 3);
  EXPECT_EQ(run({"kernels", "--random-spec", "3", "1", "--out", "/nonexistent/dir/k.json"}).code, 3);
}

TEST(Cli, ToleranceFromEnvironment) {
  const auto path = temp_file("two_env.json", R"({"N": 2, "b": [1, 1], "d": [1, 0]})");
  const auto [ok, out_ok] = run_binary("verify --spec " + path);
  EXPECT_EQ(ok, 0);
  const auto [bad, out_bad] = run_binary("verify --spec " + path + " --tol -1");
  EXPECT_EQ(bad, 2);
  setenv("BDTWINE_TOLERANCE", "1e-30", 1);
  const auto [tight, out_tight] = run_binary("verify --random-spec 8 5");
  unsetenv("BDTWINE_TOLERANCE");
  EXPECT_EQ(tight, 1);
  EXPECT_NE(out_tight.find("\"pass\":false"), std::string::npos);
}

TEST(Cli, KernelsRoundTripThroughVerify) {
  const auto kernels = std::filesystem::path(::testing::TempDir()) / "kernels.json";
  ASSERT_EQ(run({"kernels", "--random-spec", "7", "2", "--out", kernels.string()}).code, 0);
  const auto r = run({"verify", "--kernels", kernels.string()});
  EXPECT_EQ(r.code, 0) << r.err;

  // Corrupt one composed entry; verify must fail and name the check.
  auto doc = json::parse(read_text_file(kernels));
  doc["plus"]["composed"][3][1] = doc["plus"]["composed"][3][1].get<double>() + 1e-3;
  const auto broken = temp_file("broken.json", doc.dump());
  const auto b = run({"verify", "--kernels", broken});
  EXPECT_EQ(b.code, 1);
  EXPECT_NE(b.err.find("plus.composed_residual"), std::string::npos);
}

TEST(Cli, KernelsSides) {
  const auto plus = json::parse(run({"kernels", "--random-spec", "4", "1", "--side", "plus"}).out);
  EXPECT_TRUE(plus.contains("plus"));
  EXPECT_FALSE(plus.contains("minus"));
  EXPECT_EQ(plus["plus"]["stages"].size(), 3u);
  EXPECT_EQ(plus["plus"]["composed"].size(), 5u);
  EXPECT_EQ(run({"kernels", "--random-spec", "4", "1", "--side", "sideways"}).code, 2);
}

TEST(Cli, PassageTableAndCsv) {
  const auto csv = std::filesystem::path(::testing::TempDir()) / "table.csv";
  const auto r = run({"passage", "--random-spec", "4", "9", "--start", "2", "--t-grid", "0:10:11",
                      "--csv", csv.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["rows"].size(), 11u);
  EXPECT_LE(j["max_abs_diff"].get<double>(), 1e-8);
  const std::string table = read_text_file(csv);
  EXPECT_EQ(table.rfind("t,closed_form,oracle,diff\r\n", 0), 0u);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 12);
}

TEST(Cli, SimulateIsByteIdentical) {
  const std::string args = "simulate --random-spec 3 4 --paths 3000 --seed 17";
  const auto [c1, o1] = run_binary(args);
  const auto [c2, o2] = run_binary(args + " --threads 3");
  EXPECT_EQ(c1, 0);
  EXPECT_EQ(c2, 0);
  EXPECT_EQ(o1, o2);
  EXPECT_FALSE(o1.empty());
  const auto j = json::parse(o1);
  EXPECT_EQ(j["report"]["violations"]["sandwich"].get<int>(), 0);
  EXPECT_EQ(j["report"]["violations"]["arrival"].get<int>(), 0);
}

TEST(Cli, RecordPaths) {
  const auto out = std::filesystem::path(::testing::TempDir()) / "paths.jsonl";
  const auto r = run({"simulate", "--random-spec", "3", "4", "--paths", "25", "--seed", "1",
                      "--record-paths", out.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  std::istringstream lines(read_text_file(out));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto p = json::parse(line);
    EXPECT_EQ(p["events"].back()[1].get<int>(), 3);
    ++n;
  }
  EXPECT_EQ(n, 25);
}

TEST(Cli, RepeatedRunsAreIdentical) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"spectrum", "--random-spec", "6", "1"},
           {"kernels", "--random-spec", "6", "1"},
           {"verify", "--random-spec", "6", "1"},
           {"passage", "--random-spec", "6", "1", "--t-grid", "0:5:7"}}) {
    const auto a = run(args);
    const auto b = run(args);
    EXPECT_EQ(a.code, 0);
    EXPECT_EQ(a.out, b.out);
  }
}
