#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "tsadv/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string stdout_text;
};

// popen captures stdout only; stderr is the diagnostic channel and is
// left alone so failures stay visible in the test log.
RunResult run_cli(const std::string& args) {
  std::string cmd = std::string(TSADV_CLI_PATH) + " " + args;
  FILE* pipe = popen(cmd.c_str(), "r");
  EXPECT_NE(pipe, nullptr);
  std::string out;
  std::array<char, 512> buf;
  while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST(Cli, TrainWritesModelAndLogWithHighAccuracy) {
  TempDir dir("tsadv_cli_train");
  std::string model = dir.file("m.model");
  auto r = run_cli("train --synthetic d=64,bump=8,n=200 --arch mlp --epochs 40 "
                   "--lr 0.01 --seed 1 --out " + model + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_TRUE(r.stdout_text.empty()) << "stdout must stay machine-readable";
  EXPECT_TRUE(fs::exists(model));
  nlohmann::json log = nlohmann::json::parse(std::ifstream(model + ".train.json"));
  EXPECT_GE(log["test_accuracy"].get<double>(), 0.95);
  EXPECT_EQ(log["loss_curve"].size(), 40u);
}

TEST(Cli, TrainIsByteDeterministicUnderSeed) {
  TempDir dir("tsadv_cli_det");
  std::string m1 = dir.file("a.model"), m2 = dir.file("b.model");
  std::string common = "train --synthetic d=32,bump=4,n=40 --arch mlp --epochs 10 "
                       "--seed 7 --out ";
  EXPECT_EQ(run_cli(common + m1 + " 2>/dev/null").exit_code, 0);
  EXPECT_EQ(run_cli(common + m2 + " 2>/dev/null").exit_code, 0);
  EXPECT_EQ(slurp(m1), slurp(m2));
}

TEST(Cli, MissingDatasetPathExitsThree) {
  TempDir dir("tsadv_cli_baddata");
  auto r = run_cli("train --data-train /nonexistent/a.tsv --data-test /nonexistent/b.tsv "
                   "--arch mlp --out " + dir.file("m.model") + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 3);
}

TEST(Cli, BadConfigExitsTwo) {
  TempDir dir("tsadv_cli_badcfg");
  auto r = run_cli("train --synthetic d=64,bump=8,n=200 --arch nosucharch --out " +
                   dir.file("m.model") + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 2);
  auto r2 = run_cli("attack --model x --out y --attack warp 2>/dev/null");
  EXPECT_NE(r2.exit_code, 0);
}

TEST(Cli, ShapeMismatchExitsFour) {
  TempDir dir("tsadv_cli_shape");
  std::string model = dir.file("m.model");
  ASSERT_EQ(run_cli("train --synthetic d=32,bump=4,n=40 --arch logistic --epochs 3 "
                    "--out " + model + " 2>/dev/null").exit_code, 0);
  auto r = run_cli("attack --model " + model +
                   " --synthetic d=64,bump=8,n=40 --attack pgd --eps-inf 0.5 "
                   "--iterations 5 --out " + dir.file("o.jsonl") + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 4);
}

TEST(Cli, AttackWritesOneRecordPerTestSample) {
  TempDir dir("tsadv_cli_attack");
  std::string model = dir.file("m.model");
  ASSERT_EQ(run_cli("train --synthetic d=32,bump=4,n=40,seed=2 --arch mlp --epochs 15 "
                    "--seed 2 --out " + model + " 2>/dev/null").exit_code, 0);
  std::string out = dir.file("o.jsonl");
  auto r = run_cli("attack --model " + model +
                   " --synthetic d=32,bump=4,n=40,seed=2 --attack cw "
                   "--regularizer asl0 --iterations 50 --jobs 2 --out " + out +
                   " --save-deltas " + dir.file("d.bin") + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 0);
  auto records = tsadv::read_outcomes(out);
  EXPECT_EQ(records.size(), 16u);  // 40 per class -> 8 + 8 test
  EXPECT_TRUE(fs::exists(dir.file("d.bin")));
  EXPECT_EQ(fs::file_size(dir.file("d.bin")), 16u * 32u * sizeof(double));
  // adaptive runs with asl0 would carry final_sigma; plain asl0 must not
  EXPECT_FALSE(records[0].final_sigma.has_value());
}

TEST(Cli, InertWrapperOutcomesByteIdentical) {
  TempDir dir("tsadv_cli_inert");
  std::string model = dir.file("m.model");
  ASSERT_EQ(run_cli("train --synthetic d=32,bump=4,n=40,seed=4 --arch mlp --epochs 15 "
                    "--seed 4 --out " + model + " 2>/dev/null").exit_code, 0);
  std::string a = dir.file("plain.jsonl"), b = dir.file("as.jsonl");
  std::string common = "attack --model " + model +
                       " --synthetic d=32,bump=4,n=40,seed=4 --regularizer none "
                       "--lambda 0 --iterations 40 --eps-inf 0.5 ";
  ASSERT_EQ(run_cli(common + "--attack pgd --out " + a + " 2>/dev/null").exit_code, 0);
  ASSERT_EQ(run_cli(common + "--attack as_pgd --out " + b + " 2>/dev/null").exit_code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Cli, ReportComputesAsrFromRecords) {
  TempDir dir("tsadv_cli_report");
  // hand-built outcomes: 6 successes of 10
  std::vector<tsadv::SampleRecord> recs(10);
  for (int i = 0; i < 10; ++i) {
    recs[i].index = i;
    recs[i].success = i < 6;
    recs[i].l2_distance = 1.0;
  }
  std::string out = dir.file("cell.jsonl");
  tsadv::write_outcomes(out, recs);
  tsadv::CellMeta meta;
  meta.model = "mlp";
  meta.attack = "pgd";
  meta.regularizer = "none";
  meta.n_samples = 10;
  tsadv::write_cell_meta(out, meta);

  std::string csv = dir.file("report.csv");
  auto r = run_cli("report --inputs " + out + " --out-csv " + csv + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 0);
  std::string text = slurp(csv);
  EXPECT_NE(text.find("mlp,pgd,none,0.59999999999999998,"), std::string::npos);
}

TEST(Cli, ReportMissingFileExitsFive) {
  auto r = run_cli("report --inputs /nonexistent/x.jsonl --out-csv /dev/null 2>/dev/null");
  EXPECT_EQ(r.exit_code, 5);
}

TEST(Cli, GridRunsAndResumes) {
  TempDir dir("tsadv_cli_grid");
  nlohmann::json cfg;
  cfg["dataset"]["synthetic"] = {{"n_per_class", 20}, {"length", 16},
                                 {"bump_width", 4},   {"noise_std", 0.1},
                                 {"seed", 5}};
  cfg["model"] = {{"architecture", "mlp"}, {"hidden", 8}, {"epochs", 15},
                  {"learning_rate", 0.02}, {"seed", 5}};
  cfg["attacks"] = {{{"attack", "pgd"}, {"iterations", 20}, {"eps_inf", 0.4}},
                    {{"attack", "cw"}, {"iterations", 20}}};
  cfg["regularizers"] = {{{"kind", "none"}}, {{"kind", "asl0"}, {"lambda", 1e-5}}};
  cfg["output_dir"] = dir.file("out");
  cfg["seed"] = 5;
  std::string cfg_path = dir.file("exp.json");
  std::ofstream(cfg_path) << cfg.dump(2);

  auto r = run_cli("grid --config " + cfg_path + " --jobs 2 2>/dev/null");
  EXPECT_EQ(r.exit_code, 0);
  std::string csv = slurp(dir.path / "out" / "report.csv");
  // header + 4 cells
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);

  // resume: everything done, nothing recomputed
  std::string before = slurp(dir.path / "out" / "pgd__none.jsonl.meta.json");
  auto r2 = run_cli("grid --config " + cfg_path + " 2>/dev/null");
  EXPECT_EQ(r2.exit_code, 0);
  EXPECT_EQ(slurp(dir.path / "out" / "pgd__none.jsonl.meta.json"), before);
}

TEST(Cli, GenDataRoundTrip) {
  TempDir dir("tsadv_cli_gen");
  auto r = run_cli("gen-data --length 24 --bump-width 4 --n-per-class 10 --seed 9 "
                   "--out-train " + dir.file("tr.tsv") + " --out-test " +
                   dir.file("te.tsv") + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 0);
  tsadv::Dataset ds = tsadv::load_dataset(dir.file("tr.tsv"), dir.file("te.tsv"));
  tsadv::Dataset direct = [&] {
    tsadv::SyntheticSpec s;
    s.length = 24;
    s.bump_width = 4;
    s.n_per_class = 10;
    s.seed = 9;
    return tsadv::gen_synthetic(s);
  }();
  ASSERT_EQ(ds.train.size(), direct.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    EXPECT_EQ(ds.train[i].label, direct.train[i].label);
    EXPECT_EQ(ds.train[i].values, direct.train[i].values);  // 17-digit round trip
  }
}
