// Copyright 2026 The costa-workbench Authors
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

// Drives the built `costa` binary end to end.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "costa/workbench.hpp"

#ifndef COSTA_CLI
#error "COSTA_CLI must point at the costa executable"
#endif

namespace costa {
namespace {

namespace fs = std::filesystem;

const fs::path kDir = fs::temp_directory_path() / "costa_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(COSTA_CLI) + " " + args + " > " + (kDir / "stdout.txt").string() + " 2> " +
                          (kDir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string path(const std::string& rel) { return (kDir / rel).string(); }

// Small model so the suite stays quick.
const char* kTinyConfig =
    "model_dim=8\nheads=2\nacoustic_heads=2\nff_dim=12\nacoustic_ff_dim=12\nacoustic_blocks=1\n"
    "encoder_blocks=1\ndecoder_blocks=1\nepochs=2\nfeature_dim=4\nmatrix_vocab_size=5\nembedded_vocab_size=3\n"
    "min_length=2\nmax_length=4\n";

class Cli : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    std::ofstream(kDir / "tiny.cfg") << kTinyConfig;
  }
  static void TearDownTestSuite() { fs::remove_all(kDir); }
};

TEST_F(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("train"), 1);  // --corpus is required
  EXPECT_EQ(run("generate --cmi 0.6 --n 5 --out " + path("bad")), 1);
  EXPECT_NE(slurp(kDir / "stderr.txt").find("[0, 0.5]"), std::string::npos);
  EXPECT_EQ(run("ablate --axis nonsense --out " + path("ab0")), 1);
  EXPECT_EQ(run("report --in " + path("nowhere")), 1);
}

TEST_F(Cli, GenerateTrainEvalReport) {
  ASSERT_EQ(run("--config " + path("tiny.cfg") + " generate --cmi 0.25 --n 40 --seed 7 --out " + path("data")), 0);
  EXPECT_NE(slurp(kDir / "stdout.txt").find("measured CMI"), std::string::npos);
  const auto data = corpus::read_manifest(kDir / "data");
  EXPECT_EQ(data.size(), 40u);

  ASSERT_EQ(run("--config " + path("tiny.cfg") + " --seed 3 --out " + path("run1") + " train --corpus " +
                path("data") + " --fusion append-speech-first --quiet"),
            0)
      << slurp(kDir / "stderr.txt");
  EXPECT_EQ(slurp(kDir / "run1" / "model.cstm").substr(0, 4), "CSTM");
  EXPECT_EQ(read_key_values(kDir / "run1" / "model.cstm.meta").at("fusion"), "append-speech-first");
  ASSERT_EQ(run("--config " + path("tiny.cfg") + " --seed 3 --out " + path("run2") + " train --corpus " +
                path("data") + " --fusion append-speech-first --quiet"),
            0);
  EXPECT_EQ(slurp(kDir / "run1" / "train_log.csv"), slurp(kDir / "run2" / "train_log.csv"));
  EXPECT_EQ(slurp(kDir / "run1" / "model.cstm"), slurp(kDir / "run2" / "model.cstm"));
  EXPECT_EQ(slurp(kDir / "run1" / "train_log.csv").substr(0, 23), "step,total,st,asr,mt,lr");

  ASSERT_EQ(run("eval --checkpoint " + path("run1/model.cstm") + " --corpus " + path("data") + " --out " +
                path("eval")),
            0)
      << slurp(kDir / "stderr.txt");
  const std::string report = slurp(kDir / "eval" / "report.csv");
  EXPECT_NE(report.find("bleu,"), std::string::npos);
  const auto rows = metrics::read_per_utt_csv(kDir / "eval" / "per_utt.csv");
  EXPECT_EQ(rows.size(), 40u);
  EXPECT_TRUE(fs::exists(kDir / "eval" / "bins.svg"));

  // `report` recomputes the totals from per_utt.csv alone.
  fs::remove(kDir / "eval" / "report.csv");
  ASSERT_EQ(run("report --in " + path("eval")), 0);
  EXPECT_EQ(slurp(kDir / "eval" / "report.csv"), report);

  // A corpus with different vocabularies is rejected.
  ASSERT_EQ(run("--config " + path("tiny.cfg") + " generate --n 3 --out " + path("other") + " --seed 1"), 0);
  std::ofstream(kDir / "other" / "corpus.cfg", std::ios::app) << "embedded_vocab_size=4\n";
  EXPECT_NE(run("eval --checkpoint " + path("run1/model.cstm") + " --corpus " + path("other") + " --out " +
                path("eval2")),
            0);
}

TEST_F(Cli, DivergenceExitsWithThree) {
  ASSERT_EQ(run("--config " + path("tiny.cfg") + " generate --n 6 --seed 2 --out " + path("nan")), 0);
  // Poison one frame file: its first float becomes NaN.
  const auto m = corpus::read_manifest(kDir / "nan");
  for (const auto& u : m.records) {
    Array<float> f = u.frames;
    f[0] = std::numeric_limits<float>::quiet_NaN();
    corpus::write_frames(kDir / "nan" / corpus::frames_file(u), f);
  }
  EXPECT_EQ(run("--config " + path("tiny.cfg") + " --out " + path("nanrun") + " train --corpus " + path("nan") +
                " --quiet"),
            3);
  EXPECT_NE(slurp(kDir / "stderr.txt").find("last finite step"), std::string::npos);
}

TEST_F(Cli, AblateWritesTableAndChart) {
  const std::string args = "--config " + path("tiny.cfg") + " --out " + path("ab") +
                           " ablate --axis LOSS --seeds 1,2 --n 12 --epochs 1 --test-size 4";
  ASSERT_EQ(run(args), 0) << slurp(kDir / "stderr.txt");
  const auto rows = workbench::read_csv_rows(kDir / "ab" / "ablation.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][1], "st-only");
  EXPECT_EQ(rows[2][1], "full");
  EXPECT_EQ(rows[1][2], "2");
  EXPECT_TRUE(fs::exists(kDir / "ab" / "ablation_loss.svg"));
  EXPECT_TRUE(fs::exists(kDir / "ab" / "runs.csv"));
  const std::string table = slurp(kDir / "ab" / "ablation.csv");
  ASSERT_EQ(run(args), 0);
  EXPECT_EQ(slurp(kDir / "ab" / "ablation.csv"), table);
  ASSERT_EQ(run("report --in " + path("ab")), 0);
  EXPECT_NE(slurp(kDir / "stdout.txt").find("st-only"), std::string::npos);
}

}  // namespace
}  // namespace costa
