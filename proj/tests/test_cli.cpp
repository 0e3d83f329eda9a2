#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "commands.hpp"

namespace fs = std::filesystem;
using safe_fbsde::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "safe-fbsde");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST(Cli, MissingConfigIsConfigError) {
  const Result r = invoke({"train", "--config", "/nonexistent/run.json"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/nonexistent/run.json"), std::string::npos);
}

TEST(Cli, NoTaskIsConfigError) { EXPECT_NE(invoke({"train"}).code, 0); }

TEST(Cli, UnknownSubcommand) { EXPECT_NE(invoke({"fly"}).code, 0); }

TEST(Cli, PresetPrintsJson) {
  const Result r = invoke({"preset", "car-multi"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(nlohmann::json::parse(r.out)["task"], "car-multi");
}

TEST(Cli, QpFuzz) {
  const Result r = invoke({"qp-fuzz", "--instances", "50"});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, ShortTrainEvaluateVerify) {
  const fs::path dir = fs::temp_directory_path() / "safe_fbsde_cli_test";
  fs::remove_all(dir);
  const Result t = invoke({"train", "--task", "pendulum-balance", "--iterations", "2", "--batch", "4",
                           "--deterministic", "--output-dir", dir.string()});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(count_lines(dir / "train_log.jsonl"), 2u);
  for (const char* f : {"config.json", "params.json", "params.bin", "train_summary.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  std::ifstream s(dir / "train_summary.json");
  const nlohmann::json summary = nlohmann::json::parse(s);
  EXPECT_EQ(summary["iterations_completed"], 2);
  EXPECT_EQ(summary["trajectories"], 8);

  const Result e = invoke({"evaluate", "--task", "pendulum-balance", "--rollouts", "4", "--output-dir",
                           dir.string()});
  EXPECT_EQ(e.code, 0) << e.err;
  EXPECT_TRUE(fs::exists(dir / "eval_stats.json"));
  EXPECT_TRUE(fs::exists(dir / "eval_mean.csv"));

  const Result v = invoke({"verify", "--task", "pendulum-balance", "--controller", "network",
                           "--rollouts", "20", "--output-dir", dir.string()});
  EXPECT_EQ(v.code, 0) << v.err;
  EXPECT_TRUE(fs::exists(dir / "verify_network.json"));

  const Result bad = invoke({"evaluate", "--task", "pendulum-balance", "--params",
                             (dir / "missing.json").string(), "--output-dir", dir.string()});
  EXPECT_NE(bad.code, 0);
  fs::remove_all(dir);
}

TEST(Cli, UnfilteredVerifyReportsViolation) {
  const fs::path dir = fs::temp_directory_path() / "safe_fbsde_cli_verify";
  const Result v = invoke({"verify", "--task", "pendulum-balance", "--controller", "unfiltered",
                           "--rollouts", "100", "--output-dir", dir.string()});
  EXPECT_EQ(v.code, 3) << v.out << v.err;
  fs::remove_all(dir);
}
