// Copyright 2026 The slimtrain Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "slimtrain_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "config.json") << R"({
      "epochs": 2, "batch": 32, "reconfiguration_interval": 1, "seed": 3,
      "model": {"arch": "resnet", "stages": [{"blocks": 1, "width": 4}, {"blocks": 1, "width": 8}]},
      "dataset": {"train": 64, "val": 32, "shape": [3, 8, 8], "classes": 4}})";
    trained_ = run("train --config " + (dir_ / "config.json").string() + " --out " + (dir_ / "run").string());
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static Result run(const std::string& args) {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string(SLIMTRAIN_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static inline fs::path dir_;
  static inline Result trained_;
};

TEST_F(Cli, TrainWritesArtifacts) {
  ASSERT_EQ(trained_.code, 0) << trained_.err;
  for (const char* f : {"config.json", "metrics.csv", "final.ptck", "trajectory.json", "history.json", "summary.json",
                        "plan_epoch001.json", "checkpoint_epoch002.ptck"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  const auto csv = slurp(dir_ / "run" / "metrics.csv");
  EXPECT_EQ(csv.rfind("epoch,iter_count,batch,lr,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST_F(Cli, CostReportsPlannedModes) {
  const auto r = run("cost --checkpoint " + (dir_ / "run" / "final.ptck").string() + " --batch 64 --devices 4");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["batch"], 64);
  EXPECT_EQ(j["per_epoch"]["devices"], 4);
  EXPECT_TRUE(j["planned"].contains("union"));
  EXPECT_LE(j["planned"]["gating"]["inference_flops"].get<std::int64_t>(),
            j["planned"]["union"]["inference_flops"].get<std::int64_t>());
}

TEST_F(Cli, CompareValidateReport) {
  auto r = run("compare --trajectory " + (dir_ / "run" / "trajectory.json").string() + " --interval 1 --json");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["rows"].size(), 3u);
  r = run("validate --checkpoint " + (dir_ / "run" / "final.ptck").string());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "ok\n");
  r = run("report --history " + (dir_ / "run" / "history.json").string() + " --checkpoint " +
          (dir_ / "run" / "final.ptck").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["revival"].contains("revived_channel_fraction"));
  EXPECT_GT(j["density"]["weights"].get<std::int64_t>(), 0);
}

TEST_F(Cli, ErrorsExitNonZero) {
  std::ofstream(dir_ / "bad.json") << R"({"model": {"depth": 3}})";
  auto r = run("train --config " + (dir_ / "bad.json").string() + " --out " + (dir_ / "bad").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("model.depth"), std::string::npos);
  std::ofstream(dir_ / "junk.ptck") << "not a checkpoint";
  r = run("validate --checkpoint " + (dir_ / "junk.ptck").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("offset"), std::string::npos);
  r = run("frobnicate");
  EXPECT_NE(r.code, 0);
}

}  // namespace
