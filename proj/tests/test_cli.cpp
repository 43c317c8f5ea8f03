// Copyright 2026 The leopard-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with `args` (already shell-quoted), capturing stdout.
Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + LEOPARD_CLI + "' " + args + " 2>/dev/null";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("leopard_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return "'" + (dir_ / name).string() + "'"; }

  fs::path dir_;
  const std::string golden_trace_ = std::string("'") + LEOPARD_TESTDATA + "/golden_trace.bin'";
};

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("no-such-command").code, 2);
  EXPECT_EQ(run("gen-synthetic").code, 2);  // --out is required
  EXPECT_EQ(run("sweep --trace " + golden_trace_).code, 2);  // --kind is required
  EXPECT_EQ(run("sweep --kind both --trace " + golden_trace_).code, 2);
}

TEST_F(Cli, Version) {
  const auto r = run("--version");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("0.1.0"), std::string::npos);
}

TEST_F(Cli, GenSyntheticIsDeterministic) {
  ASSERT_EQ(run("gen-synthetic --seed 9 -s 16 --d 8 --rate 0.5 -o " + path("a.bin")).code, 0);
  ASSERT_EQ(run("gen-synthetic --seed 9 -s 16 --d 8 --rate 0.5 -o " + path("b.bin")).code, 0);
  ASSERT_EQ(run("gen-synthetic --seed 10 -s 16 --d 8 --rate 0.5 -o " + path("c.bin")).code, 0);
  const auto a = slurp(dir_ / "a.bin");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir_ / "b.bin"));
  EXPECT_NE(a, slurp(dir_ / "c.bin"));
}

TEST_F(Cli, GenSyntheticRejectsBadParameters) {
  EXPECT_EQ(run("gen-synthetic --rate 1.5 -o " + path("x.bin")).code, 2);
  EXPECT_EQ(run("gen-synthetic --distribution uniform -o " + path("x.bin")).code, 2);
  EXPECT_EQ(run("gen-synthetic -s abc -o " + path("x.bin")).code, 2);
}

TEST_F(Cli, ValidateTrace) {
  const auto ok = run("validate-trace " + golden_trace_);
  EXPECT_EQ(ok.code, 0);
  EXPECT_NE(ok.out.find("ok"), std::string::npos);

  EXPECT_EQ(run("validate-trace " + path("missing.bin")).code, 2);

  auto bytes = slurp(std::string(LEOPARD_TESTDATA) + "/golden_trace.bin");
  bytes[0] = 'X';
  spit(dir_ / "bad_magic.bin", bytes);
  EXPECT_EQ(run("validate-trace " + path("bad_magic.bin")).code, 2);

  bytes = slurp(std::string(LEOPARD_TESTDATA) + "/golden_trace.bin");
  bytes.resize(bytes.size() - 3);
  spit(dir_ / "short.bin", bytes);
  EXPECT_EQ(run("validate-trace " + path("short.bin")).code, 2);
}

TEST_F(Cli, SimulateMatchesGoldenReport) {
  ASSERT_EQ(run("simulate --trace " + golden_trace_ + " --out-dir " + path("sim")).code, 0);
  const auto got = slurp(dir_ / "sim" / "report.json");
  EXPECT_EQ(got, slurp(std::string(LEOPARD_TESTDATA) + "/golden_report.json"));
  const auto j = nlohmann::json::parse(got);
  EXPECT_EQ(j["provenance"]["tool"], "leopard");
  EXPECT_EQ(j["provenance"]["subcommand"], "simulate");
  EXPECT_EQ(j["provenance"]["energy_table"], "default");
  EXPECT_TRUE(j.contains("tile"));
  EXPECT_TRUE(j.contains("baseline"));
  EXPECT_TRUE(j.contains("cumulative_pruning_curve"));
}

TEST_F(Cli, SimulateMissingTrace) {
  EXPECT_EQ(run("simulate --out-dir " + path("sim")).code, 2);
  EXPECT_EQ(run("simulate --trace " + path("nope.bin") + " --out-dir " + path("sim")).code, 2);
}

TEST_F(Cli, EnergyTableOverride) {
  spit(dir_ / "energy.json", R"({"v_mac": 100.0})");
  ASSERT_EQ(run("simulate --trace " + golden_trace_ + " --energy-table " + path("energy.json") + " --out-dir " +
                path("sim"))
                .code,
            0);
  const auto j = nlohmann::json::parse(slurp(dir_ / "sim" / "report.json"));
  EXPECT_EQ(j["provenance"]["energy_table"], (dir_ / "energy.json").string());
  EXPECT_EQ(j["config"]["energy"]["v_mac"], 100.0);
  const auto golden = nlohmann::json::parse(slurp(std::string(LEOPARD_TESTDATA) + "/golden_report.json"));
  EXPECT_NE(j["provenance"]["config_hash"], golden["provenance"]["config_hash"]);
}

TEST_F(Cli, BadConfigs) {
  spit(dir_ / "malformed.json", "{\"tile\": ");
  spit(dir_ / "unknown.json", R"({"tiles": {}})");
  spit(dir_ / "badfield.json", R"({"tile": {"n_qk": 0}})");
  spit(dir_ / "badenergy.json", R"({"no_such_entry": 1.0})");
  const std::string sim = "simulate --trace " + golden_trace_ + " --out-dir " + path("sim");
  EXPECT_EQ(run(sim + " --config " + path("malformed.json")).code, 2);
  EXPECT_EQ(run(sim + " --config " + path("unknown.json")).code, 2);
  EXPECT_EQ(run(sim + " --config " + path("badfield.json")).code, 2);
  EXPECT_EQ(run(sim + " --energy-table " + path("badenergy.json")).code, 2);
  EXPECT_EQ(run(sim + " --config " + path("absent.json")).code, 2);
  EXPECT_EQ(run(sim + " --B 0").code, 2);
  EXPECT_EQ(run(sim + " --preset xl").code, 2);
}

TEST_F(Cli, SweepNqk) {
  const auto a = run("sweep --kind nqk --trace " + golden_trace_);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(count_lines(a.out), 11);  // header + n_qk 3..12
  const auto b = run("sweep --kind nqk --trace " + golden_trace_, "LEOPARD_THREADS=1");
  EXPECT_EQ(a.out, b.out);
  ASSERT_EQ(run("sweep --kind nqk --range 2..4 --trace " + golden_trace_ + " -o " + path("s.csv")).code, 0);
  EXPECT_EQ(count_lines(slurp(dir_ / "s.csv")), 4);
  EXPECT_EQ(run("sweep --kind nqk --range 4-2 --trace " + golden_trace_).code, 2);
  EXPECT_EQ(run("sweep --kind nqk --range 5..2 --trace " + golden_trace_).code, 2);
}

TEST_F(Cli, SweepBits) {
  const auto a = run("sweep --kind bits --trace " + golden_trace_);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(count_lines(a.out), 5);
  const auto b = run("sweep --kind bits --bits 1,3 --trace " + golden_trace_);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(count_lines(b.out), 3);
  EXPECT_EQ(run("sweep --kind bits --bits 0 --trace " + golden_trace_).code, 2);
}

TEST_F(Cli, BadThreadCount) {
  EXPECT_EQ(run("sweep --kind bits --trace " + golden_trace_, "LEOPARD_THREADS=abc").code, 2);
  EXPECT_EQ(run("sweep --kind bits --trace " + golden_trace_, "LEOPARD_THREADS=0").code, 2);
}

TEST_F(Cli, ThresholdOverride) {
  spit(dir_ / "th.json", R"({"format": "leopard-thresholds", "version": 1, "thresholds": ["-inf"]})");
  ASSERT_EQ(run("simulate --trace " + golden_trace_ + " --thresholds " + path("th.json") + " --out-dir " +
                path("sim"))
                .code,
            0);
  const auto j = nlohmann::json::parse(slurp(dir_ / "sim" / "report.json"));
  EXPECT_EQ(j["tile"]["pruning_rate"], 0.0);
  spit(dir_ / "short.json", R"({"format": "leopard-thresholds", "version": 1, "thresholds": []})");
  EXPECT_EQ(run("simulate --trace " + golden_trace_ + " --thresholds " + path("short.json") + " --out-dir " +
                path("sim"))
                .code,
            2);
}

TEST_F(Cli, TrainSmallRun) {
  const std::string args = "train --lambda 0.01 --epochs 2 --pretrain-epochs 2 --out-dir ";
  ASSERT_EQ(run(args + path("a")).code, 0);
  ASSERT_EQ(run(args + path("b")).code, 0);
  const auto stats = slurp(dir_ / "a" / "train_stats.json");
  const auto th = slurp(dir_ / "a" / "thresholds.json");
  EXPECT_EQ(stats, slurp(dir_ / "b" / "train_stats.json"));
  EXPECT_EQ(th, slurp(dir_ / "b" / "thresholds.json"));
  const auto j = nlohmann::json::parse(stats);
  EXPECT_EQ(j["provenance"]["subcommand"], "train");
  EXPECT_EQ(j["lambda"], 0.01);
  EXPECT_EQ(j["epochs"].size(), 3u);  // the initial evaluation plus two epochs
  EXPECT_EQ(nlohmann::json::parse(th)["thresholds"].size(), 1u);
}

TEST_F(Cli, TrainRejectsBadParameters) {
  EXPECT_EQ(run("train --epochs -1 --out-dir " + path("t")).code, 2);
  EXPECT_EQ(run("train --lambda -1 --epochs 1 --pretrain-epochs 1 --out-dir " + path("t")).code, 2);
}

}  // namespace
