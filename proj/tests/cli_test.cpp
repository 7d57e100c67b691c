// Drives the regle executable end to end through the shell.
#include <gtest/gtest.h>
#include <json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "regle/csv.hpp"
#include "regle/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  int code;
  std::string out, err;
  json out_json() const { return json::parse(out.substr(0, out.find('\n'))); }
  // The error object is the last stderr line; progress lines precede it.
  json err_json() const {
    std::string s = err;
    while (!s.empty() && s.back() == '\n') s.pop_back();
    return json::parse(s.substr(s.rfind('\n') == std::string::npos ? 0 : s.rfind('\n') + 1));
  }
};

const fs::path kScratch = fs::temp_directory_path() / "regle_cli_test";

Outcome run(const std::string& args) {
  fs::create_directories(kScratch);
  const fs::path o = kScratch / "stdout.txt", e = kScratch / "stderr.txt";
  const std::string cmd = std::string("\"") + REGLE_CLI_PATH + "\" " + args + " >\"" + o.string() + "\" 2>\"" +
                          e.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
}

const std::string kTinyCohort = "--n-individuals 200 --n-variants 120 --n-chromosomes 2 --seed 5";
const std::string kTinyTrain = "--epochs 1 --seeds 2";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kScratch);
    const Outcome r = run("simulate --out " + (kScratch / "cohort").string() + " " + kTinyCohort);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static fs::path cohort() { return kScratch / "cohort"; }
};

}  // namespace

TEST_F(Cli, SimulateWritesCohortAndReportsShape) {
  EXPECT_TRUE(fs::exists(cohort() / "genotypes.geno"));
  EXPECT_TRUE(fs::exists(cohort() / "catalog.csv"));
  const Outcome again = run("simulate --out " + (kScratch / "cohort2").string() + " " + kTinyCohort);
  ASSERT_EQ(again.code, 0);
  const json j = again.out_json();
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["individuals"], 200);
  EXPECT_EQ(j["variants"], 120);
  // Same seed, same bytes.
  EXPECT_EQ(slurp(cohort() / "genotypes.geno"), slurp(kScratch / "cohort2" / "genotypes.geno"));
  EXPECT_EQ(slurp(cohort() / "waveforms.rgl"), slurp(kScratch / "cohort2" / "waveforms.rgl"));
}

TEST_F(Cli, TrainGwasPrsPipeline) {
  const fs::path cell = kScratch / "cell_b1";
  Outcome r = run("train --cohort " + cohort().string() + " --out " + cell.string() +
              " --variant BETA_VAE --beta 1 " + kTinyTrain);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out_json()["cell"], "BETA_VAE_b1");
  EXPECT_TRUE(regle::experiment::missing_files(cell, regle::experiment::train_files()).empty());

  r = run("gwas --cohort " + cohort().string() + " --cell " + cell.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(regle::experiment::missing_files(cell, regle::experiment::gwas_files(5)).empty());

  r = run("prs --cohort " + cohort().string() + " --cell " + cell.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = r.out_json();
  ASSERT_TRUE(j["heldout_auc"].is_object());
  const regle::csv::Table auc = regle::csv::read(cell / regle::experiment::kAucFile);
  ASSERT_EQ(j["heldout_auc"].size(), auc.rows.size());
  for (const auto& row : auc.rows) {
    const double printed = j["heldout_auc"][row[0]].get<double>();
    EXPECT_EQ(printed, std::stod(row[1])) << row[0];
    EXPECT_GE(printed, 0.0);
    EXPECT_LE(printed, 1.0);
  }
}

TEST_F(Cli, ConfigFileIsOverriddenByFlags) {
  const fs::path cfg = kScratch / "plan.cfg";
  std::ofstream(cfg) << "[cohort]\nn_individuals = 150\nn_variants = 80\nseed = 9\n";
  Outcome r = run("simulate --config " + cfg.string() + " --out " + (kScratch / "c_cfg").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out_json()["individuals"], 150);
  EXPECT_EQ(r.out_json()["variants"], 80);
  r = run("simulate --config " + cfg.string() + " --n-variants 90 --out " + (kScratch / "c_cfg2").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out_json()["individuals"], 150);
  EXPECT_EQ(r.out_json()["variants"], 90);
  // Later flags win over earlier ones.
  r = run("simulate --n-variants 70 --n-variants 60 --n-individuals 150 --out " + (kScratch / "c_cfg3").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out_json()["variants"], 60);
}

TEST_F(Cli, SweepThenReport) {
  const fs::path out = kScratch / "sweep";
  const std::string args = "sweep --out " + out.string() + " " + kTinyCohort + " " + kTinyTrain +
                           " --include-vae false --beta-grid 2 --gamma-grid ''";
  Outcome r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out_json()["trained"], 2);
  EXPECT_EQ(r.out_json()["failed"].size(), 0u);
  r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out_json()["trained"], 0);
  EXPECT_EQ(r.out_json()["skipped"], 2);

  r = run("report --in " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out_json()["files"].size(), 7u);
  for (const auto& f : r.out_json()["files"]) EXPECT_TRUE(fs::exists(f.get<std::string>())) << f;

  // A changed plan in the same directory is refused rather than mixed in.
  r = run("sweep --out " + out.string() + " " + kTinyCohort + " --epochs 2 --seeds 2 --include-vae false "
          "--beta-grid 2 --gamma-grid ''");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err_json()["error"], "config");
}

TEST_F(Cli, ErrorsAreJsonWithKindAndExitCode) {
  Outcome r = run("train --cohort " + cohort().string() + " --out " + (kScratch / "x").string() + " --variant GAN");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err_json()["error"], "config");

  r = run("train --cohort " + (kScratch / "no_such_cohort").string() + " --out " + (kScratch / "x").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err_json()["error"], "io");

  r = run("simulate --out " + (kScratch / "y").string() + " --no-such-flag 3");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err_json()["error"], "usage");

  r = run("simulate");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err_json()["error"], "usage");

  r = run("simulate --out " + (kScratch / "y").string() + " --n-individuals lots");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err_json()["error"], "config");

  fs::create_directories(kScratch / "empty");
  r = run("report --in " + (kScratch / "empty").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err_json()["error"], "report");
  EXPECT_FALSE(r.err_json()["message"].get<std::string>().empty());

  r = run("train --cohort " + cohort().string() + " --out " + (kScratch / "x").string() + " --variant BETA_VAE");
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(r.err_json().contains("error"));
}

TEST_F(Cli, TrainingIsReproducibleAcrossInvocations) {
  const fs::path a = kScratch / "det_a", b = kScratch / "det_b";
  for (const auto& d : {a, b}) {
    const Outcome r = run("train --cohort " + cohort().string() + " --out " + d.string() + " --variant VAE " + kTinyTrain);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {regle::experiment::kSeedsFile, regle::experiment::kLatentsFile, regle::experiment::kModelFile})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}
