#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "tsadv/experiment.hpp"

using namespace tsadv;
namespace fs = std::filesystem;

namespace {

nlohmann::json small_grid_config(const std::string& outdir,
                                 std::vector<std::string> attacks,
                                 std::vector<std::string> regs) {
  nlohmann::json j;
  j["dataset"]["synthetic"] = {{"n_per_class", 20}, {"length", 16},
                               {"bump_width", 4},   {"noise_std", 0.1},
                               {"seed", 3}};
  j["model"] = {{"architecture", "mlp"}, {"hidden", 8},       {"optimizer", "adam"},
                {"learning_rate", 0.02}, {"epochs", 25},      {"batch_size", 16},
                {"seed", 3}};
  j["attacks"] = nlohmann::json::array();
  for (const auto& a : attacks)
    j["attacks"].push_back({{"attack", a}, {"iterations", 30}, {"alpha", 0.01},
                            {"eps_inf", 0.4}, {"eps_2", 1.0}});
  j["regularizers"] = nlohmann::json::array();
  for (const auto& r : regs) {
    nlohmann::json rj = {{"kind", r}};
    if (r != "none") rj["lambda"] = 1e-5;
    j["regularizers"].push_back(rj);
  }
  j["output_dir"] = outdir;
  j["seed"] = 3;
  return j;
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
};

}  // namespace

TEST(Records, JsonRoundTrip) {
  SampleRecord r;
  r.index = 3;
  r.label = 1;
  r.success = true;
  r.l2_distance = 0.25;
  r.close_to_zero = 12;
  r.iterations_used = 77;
  r.final_sigma = 4.5e-4;
  SampleRecord back = record_from_json(to_json(r));
  EXPECT_EQ(back.index, r.index);
  EXPECT_EQ(back.label, r.label);
  EXPECT_EQ(back.success, r.success);
  EXPECT_EQ(back.l2_distance, r.l2_distance);
  EXPECT_EQ(back.close_to_zero, r.close_to_zero);
  EXPECT_EQ(back.iterations_used, r.iterations_used);
  ASSERT_TRUE(back.final_sigma.has_value());
  EXPECT_EQ(*back.final_sigma, *r.final_sigma);
  EXPECT_FALSE(back.error.has_value());
}

TEST(Records, FileRoundTripAndCorruptionDetected) {
  TempDir dir("tsadv_records");
  std::vector<SampleRecord> recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[i].index = i;
    recs[i].l2_distance = 0.5 * i;
  }
  std::string path = (dir.path / "out.jsonl").string();
  write_outcomes(path, recs);
  auto back = read_outcomes(path);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[2].l2_distance, 1.0);

  std::ofstream(path, std::ios::app) << "{not json\n";
  EXPECT_THROW(read_outcomes(path), ReportError);
  EXPECT_THROW(read_outcomes((dir.path / "missing.jsonl").string()), ReportError);
}

TEST(Grid, FourByFourProducesSixteenRows) {
  TempDir dir("tsadv_grid16");
  nlohmann::json raw = small_grid_config(dir.path.string(),
                                         {"pgd", "pgd_l2", "cw", "cw_l2"},
                                         {"none", "l1", "l2", "asl0"});
  ExperimentConfig cfg = experiment_from_json(raw);
  GridRunResult res = run_grid(cfg, raw, 2);
  EXPECT_EQ(res.rows.size(), 16u);
  EXPECT_EQ(res.cells_run, 16);
  EXPECT_TRUE(fs::exists(dir.path / "report.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "report.json"));
  EXPECT_TRUE(fs::exists(dir.path / "comparison.json"));

  // every record file has one line per test sample
  auto records = read_outcomes((dir.path / "cw__none.jsonl").string());
  EXPECT_EQ(records.size(), 8u);  // 20 per class -> 4 + 4 test samples
}

TEST(Grid, AdaptiveAttackRejectsNonAsl0Cells) {
  TempDir dir("tsadv_gridbad");
  nlohmann::json raw =
      small_grid_config(dir.path.string(), {"as_cw"}, {"l1"});
  ExperimentConfig cfg = experiment_from_json(raw);
  EXPECT_THROW(run_grid(cfg, raw, 1), ConfigError);
}

TEST(Grid, JobsOneAndEightAgreeExceptDuration) {
  TempDir d1("tsadv_jobs1");
  TempDir d8("tsadv_jobs8");
  nlohmann::json r1 = small_grid_config(d1.path.string(), {"pgd", "cw"},
                                        {"none", "asl0"});
  nlohmann::json r8 = small_grid_config(d8.path.string(), {"pgd", "cw"},
                                        {"none", "asl0"});
  GridRunResult a = run_grid(experiment_from_json(r1), r1, 1);
  GridRunResult b = run_grid(experiment_from_json(r8), r8, 8);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].attack, b.rows[i].attack);
    EXPECT_EQ(a.rows[i].regularizer, b.rows[i].regularizer);
    EXPECT_EQ(a.rows[i].metrics.asr, b.rows[i].metrics.asr);
    EXPECT_EQ(a.rows[i].metrics.overall_mean_distance,
              b.rows[i].metrics.overall_mean_distance);
    EXPECT_EQ(a.rows[i].metrics.close_to_zero, b.rows[i].metrics.close_to_zero);
    EXPECT_EQ(a.rows[i].metrics.n_success, b.rows[i].metrics.n_success);
  }
  // outcome files are byte-identical across job counts
  for (const char* cell : {"pgd__none.jsonl", "cw__asl0.jsonl"})
    EXPECT_EQ(slurp(d1.path / cell), slurp(d8.path / cell));
}

TEST(Grid, ResumeSkipsDoneCells) {
  TempDir dir("tsadv_resume");
  nlohmann::json raw = small_grid_config(dir.path.string(), {"cw"}, {"none", "asl0"});
  ExperimentConfig cfg = experiment_from_json(raw);
  GridRunResult first = run_grid(cfg, raw, 1);
  EXPECT_EQ(first.cells_run, 2);

  // mark one cell pending and delete its outputs; the other must not be
  // recomputed (its files stay byte-identical, timestamps included)
  auto manifest = load_manifest(dir.path.string());
  ASSERT_TRUE(manifest.has_value());
  manifest->status["cw__asl0"] = "pending";
  save_manifest(dir.path.string(), *manifest);
  fs::remove(dir.path / "cw__asl0.jsonl");
  std::string done_meta_before = slurp(dir.path / "cw__none.jsonl.meta.json");

  GridRunResult second = run_grid(cfg, raw, 1);
  EXPECT_EQ(second.cells_run, 1);
  EXPECT_EQ(second.cells_skipped, 1);
  EXPECT_EQ(slurp(dir.path / "cw__none.jsonl.meta.json"), done_meta_before);
  EXPECT_TRUE(fs::exists(dir.path / "cw__asl0.jsonl"));
}

TEST(Grid, MismatchedConfigHashRefused) {
  TempDir dir("tsadv_hash");
  nlohmann::json raw = small_grid_config(dir.path.string(), {"cw"}, {"none"});
  run_grid(experiment_from_json(raw), raw, 1);
  nlohmann::json other = small_grid_config(dir.path.string(), {"pgd"}, {"none"});
  EXPECT_THROW(run_grid(experiment_from_json(other), other, 1), ConfigError);
}

TEST(Report, DuplicateCellRejected) {
  TempDir dir("tsadv_dup");
  nlohmann::json raw = small_grid_config(dir.path.string(), {"cw"}, {"none"});
  run_grid(experiment_from_json(raw), raw, 1);
  std::string orig = (dir.path / "cw__none.jsonl").string();
  std::string copy = (dir.path / "copy.jsonl").string();
  fs::copy_file(orig, copy);
  fs::copy_file(orig + ".meta.json", copy + ".meta.json");
  EXPECT_THROW(build_report({orig, copy}), ReportError);
}

TEST(Report, RowsRecomputeFromRawRecords) {
  TempDir dir("tsadv_recompute");
  nlohmann::json raw = small_grid_config(dir.path.string(), {"pgd", "cw"}, {"asl0"});
  GridRunResult res = run_grid(experiment_from_json(raw), raw, 2);
  for (const auto& row : res.rows) {
    std::string path =
        (dir.path / (row.attack + "__" + row.regularizer + ".jsonl")).string();
    auto records = read_outcomes(path);
    std::vector<OutcomeSummary> summaries;
    for (const auto& r : records) summaries.push_back(r.summary());
    MetricsRow again = aggregate(summaries, row.metrics.duration_seconds);
    EXPECT_NEAR(again.asr, row.metrics.asr, 1e-12);
    EXPECT_NEAR(again.overall_mean_distance, row.metrics.overall_mean_distance, 1e-12);
    EXPECT_NEAR(again.close_to_zero, row.metrics.close_to_zero, 1e-12);
  }
}

TEST(Inertness, OutcomeFilesByteIdenticalForInertWrapper) {
  // lambda = 0 with regularizer none: the adaptive wrapper must leave no
  // trace in the records (final_sigma is only emitted for asl0)
  SyntheticSpec spec;
  spec.n_per_class = 10;
  spec.length = 16;
  spec.bump_width = 4;
  spec.seed = 6;
  Dataset ds = gen_synthetic(spec);
  TrainConfig tc;
  tc.epochs = 20;
  tc.learning_rate = 0.02;
  tc.seed = 6;
  Model m = train(build_model(Architecture::kMlp, 16, 2, 6, 8), ds, tc).model;

  TempDir dir("tsadv_inert");
  for (auto kind : {AttackKind::kPgd, AttackKind::kCw}) {
    AttackConfig plain;
    plain.kind = kind;
    plain.regularizer = {RegularizerKind::kNone, 0.0};
    plain.iterations = 40;
    AttackConfig wrapped = plain;
    wrapped.adaptive = true;

    CellResult a = run_cell(m, ds.test, plain, 2);
    CellResult b = run_cell(m, ds.test, wrapped, 2);
    std::string pa = (dir.path / "plain.jsonl").string();
    std::string pb = (dir.path / "wrapped.jsonl").string();
    write_outcomes(pa, a.records);
    write_outcomes(pb, b.records);
    EXPECT_EQ(slurp(pa), slurp(pb)) << attack_kind_name(kind);
  }
}

TEST(Records, AbortedSampleBecomesFailedRecordWithDiagnostic) {
  // overflowing weights make matmul produce inf, which the tape reports
  // as an error; the cell keeps going and records the diagnostic
  Model m = build_model(Architecture::kLogistic, 4, 2, 1);
  for (auto& v : m.params[0].value.data) v = 1e308;
  std::vector<Series> samples(2);
  for (auto& s : samples) s.values = {1.0, 1.0, 1.0, 1.0};
  samples[0].label = 0;
  samples[1].label = 1;
  AttackConfig cfg;
  cfg.kind = AttackKind::kPgd;
  cfg.iterations = 3;
  CellResult cell = run_cell(m, samples, cfg, 1);
  ASSERT_EQ(cell.records.size(), 2u);
  for (const auto& r : cell.records) {
    EXPECT_FALSE(r.success);
    ASSERT_TRUE(r.error.has_value());
    EXPECT_NE(r.error->find("matmul"), std::string::npos);
  }
  // the record round-trips with the diagnostic intact
  SampleRecord back = record_from_json(to_json(cell.records[0]));
  EXPECT_EQ(back.error, cell.records[0].error);
}

TEST(Deltas, SidecarHoldsRawRows) {
  SyntheticSpec spec;
  spec.n_per_class = 5;
  spec.length = 8;
  spec.bump_width = 2;
  Dataset ds = gen_synthetic(spec);
  Model m = build_model(Architecture::kLogistic, 8, 2, 1);
  AttackConfig cfg;
  cfg.kind = AttackKind::kPgd;
  cfg.iterations = 10;
  CellResult cell = run_cell(m, ds.test, cfg, 1, /*keep_deltas=*/true);
  ASSERT_EQ(cell.deltas.size(), ds.test.size());
  TempDir dir("tsadv_deltas");
  std::string path = (dir.path / "deltas.bin").string();
  write_deltas(path, cell.deltas);
  EXPECT_EQ(fs::file_size(path), ds.test.size() * 8 * sizeof(double));
}
