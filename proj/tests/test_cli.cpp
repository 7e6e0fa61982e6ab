// SPDX-License-Identifier: Apache-2.0
// Drives the command-line tool as a subprocess.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grpocl/trainer.hpp"
#include "oracles.hpp"

using namespace grpocl;
namespace fs = std::filesystem;

namespace {

// Keeps test runs short: tiny training budgets with a stage interval that
// fits inside the scheduled phase.
const std::string kTiny =
    " --set train.total_steps=20 --set train.batch_groups=2 --set curriculum.stage_interval=5";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("grpocl_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the tool with `args`, returns its exit status and keeps stdout.
  int run(const std::string& args, const std::string& env = "") {
    const auto out = dir_ / "stdout.txt";
    const std::string cmd = env + " " + GRPOCL_CLI_PATH + " " + args + " > " + out.string() +
                            " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    stdout_ = read(out);
    stderr_ = read(dir_ / "stderr.txt");
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string read(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }

  static std::size_t count_lines(const std::string& s) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
  std::string stdout_;
  std::string stderr_;
};

void save(const fs::path& p, const PolicyParams& theta) {
  std::ofstream os(p);
  save_policy(os, theta);
}

}  // namespace

TEST_F(Cli, GenWritesDefaultDataset) {
  ASSERT_EQ(run("gen -o " + path("a.jsonl")), 0) << stderr_;
  const auto ds = read_dataset(fs::path(path("a.jsonl")));
  EXPECT_EQ(ds.samples.size(), 1000u);
  EXPECT_EQ(ds.config_hash.size(), 16u);
  EXPECT_TRUE(fs::exists(path("a.summary.json")));
  ASSERT_EQ(run("gen -o " + path("b.jsonl")), 0);
  EXPECT_EQ(read(path("a.jsonl")), read(path("b.jsonl")));
}

TEST_F(Cli, GenHonoursOutputRoot) {
  ASSERT_EQ(run("gen --set dataset.count_a=30 --set dataset.count_b=20",
                "GRPOCL_OUTPUT_ROOT=" + dir_.string()),
            0)
      << stderr_;
  EXPECT_EQ(read_dataset(dir_ / "runs" / "dataset.jsonl").samples.size(), 50u);
}

TEST_F(Cli, MalformedConfigFailsWithoutOutput) {
  std::ofstream(path("bad.json")) << "{\n  \"dataset\": {\"count_a\": 10,}\n}\n";
  EXPECT_EQ(run("gen -c " + path("bad.json") + " -o " + path("d.jsonl")), 2);
  EXPECT_NE(stderr_.find("line"), std::string::npos) << stderr_;
  EXPECT_FALSE(fs::exists(path("d.jsonl")));

  std::ofstream(path("unknown.json")) << "{\"dataset\": {\"cont_a\": 10}}";
  EXPECT_EQ(run("gen -c " + path("unknown.json") + " -o " + path("d.jsonl")), 2);
  EXPECT_NE(stderr_.find("dataset.cont_a"), std::string::npos) << stderr_;
  EXPECT_FALSE(fs::exists(path("d.jsonl")));

  EXPECT_EQ(run("gen --set train.lr=-1 -o " + path("d.jsonl")), 2);
  EXPECT_EQ(run("gen --bogus"), 2);
  EXPECT_FALSE(fs::exists(path("d.jsonl")));
}

TEST_F(Cli, ScoreSplitsTertilesAndIsRepeatable) {
  ASSERT_EQ(run("gen -o " + path("d.jsonl")), 0);
  ASSERT_EQ(run("score -d " + path("d.jsonl") + " -o " + path("r1.jsonl")), 0) << stderr_;
  EXPECT_NE(stdout_.find("G=8"), std::string::npos) << stdout_;
  const auto rep = read_report(fs::path(path("r1.jsonl")));
  EXPECT_EQ(rep.tier_counts(), (std::array<std::size_t, 3>{333, 333, 334}));
  EXPECT_EQ(rep.group_size, 8);
  ASSERT_EQ(run("score -d " + path("d.jsonl") + " -o " + path("r2.jsonl")), 0);
  EXPECT_EQ(read(path("r1.jsonl")), read(path("r2.jsonl")));
}

TEST_F(Cli, StrictScoreRejectsForeignDataset) {
  ASSERT_EQ(run("gen --set dataset.seed=1 -o " + path("d.jsonl")), 0);
  EXPECT_EQ(run("score --strict -d " + path("d.jsonl") + " -o " + path("r.jsonl")), 3);
  EXPECT_EQ(run("score --strict --set dataset.seed=1 -d " + path("d.jsonl") + " -o " +
                path("r.jsonl")),
            0)
      << stderr_;
}

TEST_F(Cli, TrainDryRunPrintsScheduleOnly) {
  ASSERT_EQ(run("train --dry-run --run-dir " + path("run")), 0) << stderr_;
  EXPECT_NE(stdout_.find("step,phase,lr,m,p_easy"), std::string::npos);
  EXPECT_NE(stdout_.find("warm-up steps 500, curriculum steps 1500"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("run")));
}

TEST_F(Cli, TrainAcceptsEveryStrategy) {
  for (const char* s : {"uniform", "curriculum", "easy_only", "hard_only", "full_direct"}) {
    const auto run_dir = path(std::string("run_") + s);
    ASSERT_EQ(run(std::string("train -q --strategy ") + s + kTiny + " --run-dir " + run_dir), 0)
        << s << ": " << stderr_;
    EXPECT_EQ(read_metrics(fs::path(run_dir) / "metrics.jsonl").size(), 20u);
    for (const char* f : {"config.json", "schedule.csv", "eval.json", "final_policy.txt",
                          "difficulty.jsonl", "dataset.jsonl"}) {
      EXPECT_TRUE(fs::exists(fs::path(run_dir) / f)) << s << " " << f;
    }
  }
  EXPECT_EQ(run("train -q --strategy sideways" + kTiny + " --run-dir " + path("x")), 2);
}

TEST_F(Cli, TrainResumesAndGuardsConfig) {
  const auto full = path("full");
  const auto part = path("part");
  ASSERT_EQ(run("train -q" + kTiny + " --run-dir " + full), 0) << stderr_;
  ASSERT_EQ(run("train -q" + kTiny + " --stop-after 9 --run-dir " + part), 0) << stderr_;
  EXPECT_NE(stdout_.find("stopped after step 9"), std::string::npos) << stdout_;
  EXPECT_EQ(run("train -q --seed 5" + kTiny + " --resume --run-dir " + part), 3);
  ASSERT_EQ(run("train -q" + kTiny + " --resume --run-dir " + part), 0) << stderr_;
  EXPECT_EQ(read(full + "/metrics.jsonl"), read(part + "/metrics.jsonl"));
  EXPECT_EQ(read(full + "/eval.json"), read(part + "/eval.json"));
}

TEST_F(Cli, EvalOracleCheckpointHitsEveryCleanTarget) {
  ASSERT_EQ(run("gen --set dataset.easy_only=true --set dataset.count_a=1000 -o " +
                path("d.jsonl")),
            0)
      << stderr_;
  save(path("oracle.txt"), oracle::embedding_policy(Vocab(32), 1.0));
  ASSERT_EQ(run("eval -k " + path("oracle.txt") + " -d " + path("d.jsonl") + " -o " +
                path("e.json")),
            0)
      << stderr_;
  const auto j = nlohmann::json::parse(read(path("e.json")));
  EXPECT_EQ(j["overall"]["count"], 200);
  EXPECT_EQ(j["overall"]["hit_rate"], 1.0);
  EXPECT_NE(stdout_.find("IoU@0.5 100.0%"), std::string::npos) << stdout_;
}

TEST_F(Cli, EvalUntrainedPolicyViolatesFormat) {
  ASSERT_EQ(run("gen -o " + path("d.jsonl")), 0);
  save(path("zero.txt"), PolicyParams(34, kContextDim));
  ASSERT_EQ(run("eval --split all -k " + path("zero.txt") + " -d " + path("d.jsonl") + " -o " +
                path("e.json")),
            0)
      << stderr_;
  const auto j = nlohmann::json::parse(read(path("e.json")));
  // Greedy decoding of a uniform policy is a fixed, malformed sequence; the
  // uniform sampling rate of well-formed sequences is below 2e-4.
  EXPECT_NEAR(j["overall"]["format_violation"].get<double>(),
              1.0 - oracle::uniform_format_rate(32), 1e-3);
}

TEST_F(Cli, EvalRejectsMismatchedVocabularyAndEmptySplit) {
  ASSERT_EQ(run("gen --set dataset.holdout_fraction=0 -o " + path("d.jsonl")), 0);
  save(path("small.txt"), PolicyParams(18, kContextDim));
  EXPECT_EQ(run("eval -k " + path("small.txt") + " -d " + path("d.jsonl") + " --split all"), 4);
  save(path("zero.txt"), PolicyParams(34, kContextDim));
  EXPECT_EQ(run("eval -k " + path("zero.txt") + " -d " + path("d.jsonl") + " --split test"), 2);
  EXPECT_EQ(run("eval -k " + path("zero.txt") + " -d " + path("d.jsonl") + " --split dev"), 2);
}

TEST_F(Cli, AblateWritesOneRowPerCellAndSeedAndResumes) {
  const auto csv = path("ab.csv");
  const std::string args = "ablate --axis beta_kl --values 0,0.1 --seeds 0,1" + kTiny +
                           " --set dataset.count_a=60 --set dataset.count_b=40 -o " + csv;
  ASSERT_EQ(run(args), 0) << stderr_;
  const auto first = read(csv);
  EXPECT_EQ(count_lines(first), 1u + 2 * 2 + 2);
  EXPECT_NE(first.find("beta_kl,0.1,mean,ok"), std::string::npos) << first;
  ASSERT_EQ(run(args), 0);
  EXPECT_NE(stdout_.find("kept from previous run"), std::string::npos);
  EXPECT_EQ(read(csv), first);
}

TEST_F(Cli, AblateMarksFailedCells) {
  const auto csv = path("ab.csv");
  EXPECT_EQ(run("ablate --axis beta_kl --values -1,0 --seeds 0" + kTiny +
                " --set dataset.count_a=60 --set dataset.count_b=40 -o " + csv),
            1);
  const auto text = read(csv);
  EXPECT_EQ(count_lines(text), 1u + 2 + 2);
  EXPECT_NE(text.find("beta_kl,-1,0,failed"), std::string::npos) << text;
  EXPECT_NE(text.find("beta_kl,0,0,ok"), std::string::npos) << text;
}

TEST_F(Cli, ScheduleDump) {
  ASSERT_EQ(run("schedule --every 500 -o " + path("s.csv")), 0) << stderr_;
  const auto text = read(path("s.csv"));
  EXPECT_EQ(count_lines(text), 1u + 4 + 1);
  EXPECT_NE(text.find("\n2000,curriculum,0,0,0,0,1,0.8,"), std::string::npos) << text;
}
