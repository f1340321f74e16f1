/* Copyright 2026 The bucketload Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// End-to-end runs of the bucketload binary.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "bucketload/io.hpp"

namespace bucketload {
namespace {

namespace fs = std::filesystem;

const std::string kCli = BUCKETLOAD_CLI;
const std::string kData = BUCKETLOAD_DATA_DIR;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bucketload_cli_" + std::string(::testing::UnitTest::GetInstance()
                                                ->current_test_info()
                                                ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string Path(const std::string& name) const { return (dir_ / name).string(); }

  int Run(const std::string& args) const {
    const std::string cmd = kCli + " " + args + " > " + Path("stdout.txt") + " 2> " +
                            Path("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string Stdout() const { return io::read_text(Path("stdout.txt")); }

  fs::path dir_;
};

std::string Data(const std::string& name) { return kData + "/" + name; }

std::size_t LineCount(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

TEST_F(CliTest, BenchmarkWritesSweepAndManifest) {
  const auto trace = Path("trace.jsonl");
  ASSERT_EQ(Run("benchmark --catalog " + Data("catalog_longtail.json") + " --config " +
                Data("cluster_default.json") + " --out " + trace),
            0);
  // 3 short shapes x 2 levels + 3 long shapes x 4 levels.
  EXPECT_EQ(LineCount(io::read_text(trace)), 18u);
  const auto m = io::manifest_from_json(io::read_json(io::manifest_path(trace)));
  EXPECT_EQ(m.command, "benchmark");
  EXPECT_EQ(m.seed, 42u);
  EXPECT_EQ(m.outputs, std::vector<std::string>{trace});
}

TEST_F(CliTest, ZeroNoiseBenchmarkIsExactAndFitsExactly) {
  const auto trace = Path("trace.jsonl");
  const auto model = Path("model.json");
  ASSERT_EQ(Run("benchmark --catalog " + Data("catalog_longtail.json") + " --config " +
                Data("cluster_zero_noise.json") + " --out " + trace),
            0);
  const auto cfg = io::simulation_config_from_json(io::read_json(Data("cluster_zero_noise.json")));
  for (const auto& t : io::trace_from_jsonl(io::read_text(trace))) {
    EXPECT_DOUBLE_EQ(t.step_time_sync, cfg.cluster.cost.predict(t.batch, t.seq_len));
  }
  ASSERT_EQ(Run("fit --trace " + trace + " --out " + model + " -v"), 0);
  const auto fitted = io::model_from_json(io::read_json(model));
  EXPECT_EQ(fitted.p, 2.0);
  EXPECT_NEAR(fitted.r2, 1.0, 1e-12);
  EXPECT_NEAR(fitted.a, cfg.cluster.cost.a, 1e-6);
  EXPECT_NEAR(fitted.b / cfg.cluster.cost.b, 1.0, 1e-9);
  EXPECT_EQ(LineCount(Stdout()), 17u + 1u);
}

TEST_F(CliTest, MissingInputIsIoError) {
  EXPECT_EQ(Run("benchmark --catalog " + Path("nope.json") + " --config " +
                Data("cluster_default.json") + " --out " + Path("t.jsonl")),
            3);
}

TEST_F(CliTest, ValidationErrorsExitTwo) {
  io::write_text(Path("one.jsonl"), "{\"batch\":1,\"seq_len\":1600,\"step_time_sync\":2.0}\n");
  EXPECT_EQ(Run("fit --trace " + Path("one.jsonl") + " --out " + Path("m.json")), 2);
  EXPECT_EQ(Run("plan --catalog " + Data("catalog_longtail.json") + " --out " + Path("p.json")),
            2);
  EXPECT_EQ(Run("frobnicate"), 2);
  EXPECT_EQ(Run("kernel-check --sizes 8by16"), 2);
}

TEST_F(CliTest, PlanFromModelBindsOnMemoryAtLongestBucket) {
  const auto model = Path("model.json");
  io::write_text(model, "{\"a\": 2.0, \"b\": 1e-9, \"p\": 2.0, \"r2\": 1.0}\n");
  const auto out = Path("plan.json");
  ASSERT_EQ(Run("plan --catalog " + Data("catalog_longtail.json") + " --model " + model +
                " --target-sync 62 --m-mem 1000000 --out " + out),
            0);
  const auto plan = io::plan_from_json(io::read_json(out));
  const auto* e = plan.find({233, 640, 640});
  ASSERT_NE(e, nullptr);
  EXPECT_EQ(e->bucket.seq_len, 48000);
  // Memory bound 20 against a compute bound of 26.
  EXPECT_EQ(e->batch_size, 20);
  EXPECT_EQ(e->binding, Binding::kMemory);

  EXPECT_EQ(Run("plan --catalog " + Data("catalog_longtail.json") + " --model " + model +
                " --target-sync 1 --m-mem 1000000 --out " + out),
            2);
}

TEST_F(CliTest, TokenBudgetPlan) {
  const auto out = Path("plan.json");
  ASSERT_EQ(Run("plan --catalog " + Data("catalog_longtail.json") + " --token-budget 48000 --out " +
                out),
            0);
  const auto j = io::read_json(out);
  ASSERT_TRUE(j.is_array());
  for (const auto& e : j) {
    EXPECT_EQ(e["batch_size"].get<std::int64_t>(),
              std::max<std::int64_t>(1, 48000 / e["seq_len"].get<std::int64_t>()));
    EXPECT_TRUE(e["binding"].is_null());
  }
  EXPECT_TRUE(fs::exists(io::manifest_path(out)));
}

TEST_F(CliTest, SimulateIsByteReproducible) {
  const auto plan = Path("plan.json");
  ASSERT_EQ(Run("plan --catalog " + Data("catalog_longtail.json") + " --config " +
                Data("policy_baseline.json") + " --out " + plan),
            0);
  const auto cfg = Path("cfg.json");
  auto c = io::read_json(Data("cluster_default.json"));
  c["steps"] = 50;
  io::write_text(cfg, io::dump(c));
  const std::string base = "simulate --catalog " + Data("catalog_longtail.json") + " --plan-a " +
                           plan + " --plan-b " + plan + " --config " + cfg + " --out ";
  ASSERT_EQ(Run(base + Path("m1.csv")), 0);
  ASSERT_EQ(Run(base + Path("m2.csv")), 0);
  EXPECT_EQ(io::read_text(Path("m1.csv")), io::read_text(Path("m2.csv")));
  EXPECT_EQ(io::read_text(Path("m1.csv.summary.json")), io::read_text(Path("m2.csv.summary.json")));
  EXPECT_EQ(LineCount(io::read_text(Path("m1.csv"))), 1u + 2u * 50u);
}

TEST_F(CliTest, IdenticalPlansAtZeroNoiseHaveZeroDelta) {
  const auto plan = Path("plan.json");
  ASSERT_EQ(Run("plan --catalog " + Data("catalog_longtail.json") + " --token-budget 288000 --out " +
                plan),
            0);
  const auto summary = Path("s.json");
  ASSERT_EQ(Run("simulate --catalog " + Data("catalog_longtail.json") + " --plan-a " + plan +
                " --plan-b " + plan + " --config " + Data("cluster_zero_noise.json") + " --out " +
                Path("m.csv") + " --summary " + summary),
            0);
  const auto j = io::read_json(summary);
  EXPECT_EQ(j["delta"]["tokens_per_sec"].get<double>(), 0.0);
  EXPECT_EQ(j["delta"]["compute_cv"].get<double>(), 0.0);
}

TEST_F(CliTest, SimulateRejectsPlanForOtherCatalog) {
  const auto plan = Path("plan.json");
  io::write_text(plan,
                 "[{\"frames\":1,\"height\":640,\"width\":640,\"seq_len\":1600,\"batch_size\":3}]");
  EXPECT_EQ(Run("simulate --catalog " + Data("catalog_longtail.json") + " --plan-a " + plan +
                " --plan-b " + plan + " --config " + Data("cluster_default.json") + " --out " +
                Path("m.csv")),
            2);
}

TEST_F(CliTest, KernelCheck) {
  EXPECT_EQ(Run("kernel-check --sizes 2x3"), 0);
  EXPECT_NE(Stdout().find("kernel-check: pass"), std::string::npos);
  EXPECT_EQ(Run("kernel-check --sizes 64x128 --tolerance 1e-12 --accumulation single"), 4);
  const auto out = Path("kc.json");
  ASSERT_EQ(Run("kernel-check --out " + out), 0);
  const auto j = io::read_json(out);
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_EQ(j["entries"].size(), 4u * 6u);
  EXPECT_EQ(j["memory"].size(), 16u);
  EXPECT_TRUE(fs::exists(io::manifest_path(out)));
}

}  // namespace
}  // namespace bucketload
