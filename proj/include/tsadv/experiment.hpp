#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsadv/attacks.hpp"
#include "tsadv/data.hpp"
#include "tsadv/error.hpp"
#include "tsadv/metrics.hpp"
#include "tsadv/model.hpp"
#include "tsadv/version.hpp"

namespace tsadv {

/// One JSON-lines record per attacked test sample. final_sigma is only
/// present for adaptive runs with the asl0 regularizer; error only when
/// the sample was aborted.
struct SampleRecord {
  int index = 0;
  int label = 0;
  bool success = false;
  double l2_distance = 0.0;
  int close_to_zero = 0;
  int iterations_used = 0;
  std::optional<double> final_sigma;
  std::optional<std::string> error;

  OutcomeSummary summary() const {
    return {success, l2_distance, static_cast<double>(close_to_zero)};
  }
};

inline nlohmann::json to_json(const SampleRecord& r) {
  nlohmann::json j;
  j["index"] = r.index;
  j["label"] = r.label;
  j["success"] = r.success;
  j["l2_distance"] = r.l2_distance;
  j["close_to_zero"] = r.close_to_zero;
  j["iterations_used"] = r.iterations_used;
  if (r.final_sigma) j["final_sigma"] = *r.final_sigma;
  if (r.error) j["error"] = *r.error;
  return j;
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.index = j.at("index").get<int>();
  r.label = j.at("label").get<int>();
  r.success = j.at("success").get<bool>();
  r.l2_distance = j.at("l2_distance").get<double>();
  r.close_to_zero = j.at("close_to_zero").get<int>();
  r.iterations_used = j.at("iterations_used").get<int>();
  if (j.contains("final_sigma")) r.final_sigma = j["final_sigma"].get<double>();
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  return r;
}

inline void write_outcomes(const std::string& path,
                           const std::vector<SampleRecord>& records) {
  std::ofstream out(path, std::ios::binary);  // no CRLF translation
  if (!out) throw DataError("cannot open outcomes file for writing: " + path);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw DataError("outcomes write failed: " + path);
}

inline std::vector<SampleRecord> read_outcomes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ReportError("missing outcomes file: " + path);
  std::vector<SampleRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ReportError("corrupt outcomes file " + path + " at line " +
                        std::to_string(line_no));
    try {
      records.push_back(record_from_json(j));
    } catch (const nlohmann::json::exception&) {
      throw ReportError("corrupt outcomes record in " + path + " at line " +
                        std::to_string(line_no));
    }
  }
  if (records.empty()) throw ReportError("empty outcomes file: " + path);
  return records;
}

/// Sidecar describing one grid cell's run: the labels the report needs
/// plus the attack-loop wall clock.
struct CellMeta {
  std::string model;
  std::string attack;
  std::string regularizer;
  double duration_seconds = 0.0;
  std::size_t n_samples = 0;
  std::string config_hash;
  std::string version = kVersion;
};

inline std::string meta_path_for(const std::string& outcomes_path) {
  return outcomes_path + ".meta.json";
}

inline void write_cell_meta(const std::string& outcomes_path, const CellMeta& m) {
  nlohmann::json j;
  j["model"] = m.model;
  j["attack"] = m.attack;
  j["regularizer"] = m.regularizer;
  j["duration_s"] = m.duration_seconds;
  j["n_samples"] = m.n_samples;
  j["config_hash"] = m.config_hash;
  j["version"] = m.version;
  std::ofstream out(meta_path_for(outcomes_path), std::ios::binary);
  if (!out) throw DataError("cannot write meta file for " + outcomes_path);
  out << j.dump(2) << '\n';
}

inline CellMeta read_cell_meta(const std::string& outcomes_path) {
  std::ifstream in(meta_path_for(outcomes_path));
  if (!in) throw ReportError("missing meta file for " + outcomes_path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ReportError("corrupt meta file for " + outcomes_path);
  CellMeta m;
  m.model = j.value("model", "unknown");
  m.attack = j.value("attack", "unknown");
  m.regularizer = j.value("regularizer", "unknown");
  m.duration_seconds = j.value("duration_s", 0.0);
  m.n_samples = j.value("n_samples", std::size_t{0});
  m.config_hash = j.value("config_hash", "");
  m.version = j.value("version", "");
  return m;
}

/// Runs one attack configuration over every test sample with a worker
/// pool. Results land in per-index slots, so aggregation order is the
/// sample order regardless of the job count. Aborted samples (non-finite
/// gradients) become failed records carrying the diagnostic.
struct CellResult {
  std::vector<SampleRecord> records;
  double duration_seconds = 0.0;
  std::vector<std::vector<double>> deltas;  // filled when keep_deltas
};

inline CellResult run_cell(const Model& model, const std::vector<Series>& samples,
                           const AttackConfig& cfg, int jobs, bool keep_deltas = false) {
  if (jobs < 1) throw ConfigError("run_cell: jobs must be >= 1");
  validate_config(cfg);
  CellResult result;
  result.records.resize(samples.size());
  if (keep_deltas) result.deltas.resize(samples.size());

  const bool emit_sigma =
      cfg.adaptive && cfg.regularizer.kind == RegularizerKind::kAsl0;
  auto t0 = std::chrono::steady_clock::now();
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= samples.size()) break;
      SampleRecord rec;
      rec.index = static_cast<int>(i);
      rec.label = samples[i].label;
      try {
        AttackOutcome o = run_attack(model, samples[i].values, samples[i].label, cfg);
        rec.success = o.success;
        rec.l2_distance = o.l2_distance;
        rec.close_to_zero = o.close_to_zero;
        rec.iterations_used = o.iterations_used;
        if (emit_sigma) rec.final_sigma = o.final_sigma;
        if (keep_deltas) result.deltas[i] = std::move(o.delta);
      } catch (const Error& e) {
        rec.success = false;
        rec.error = e.what();
        if (keep_deltas) result.deltas[i].assign(samples[i].values.size(), 0.0);
      }
      result.records[i] = std::move(rec);
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  result.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

/// Raw little-endian doubles, one d-length row per sample in index order.
inline void write_deltas(const std::string& path,
                         const std::vector<std::vector<double>>& deltas) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open deltas file for writing: " + path);
  for (const auto& row : deltas)
    for (double v : row)
      detail::write_u64_le(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw DataError("deltas write failed: " + path);
}

// ---------------------------------------------------------------------------
// Experiment grid

struct DataSpec {
  // either a synthetic spec or a train/test file pair
  std::optional<SyntheticSpec> synthetic;
  std::string train_path;
  std::string test_path;
  bool znorm = true;  // applies to file datasets only
};

struct ModelSpec {
  Architecture architecture = Architecture::kMlp;
  std::size_t hidden = 32;
  TrainConfig train;
};

struct ExperimentConfig {
  DataSpec data;
  ModelSpec model;
  std::vector<AttackConfig> attacks;
  std::vector<Regularizer> regularizers;
  std::string output_dir;
  std::uint64_t seed = 0;
  double epsilon_zero = 1e-6;
};

inline AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig cfg;
  auto [kind, adaptive] = parse_attack(j.at("attack").get<std::string>());
  cfg.kind = kind;
  cfg.adaptive = adaptive;
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.eps_inf = j.value("eps_inf", cfg.eps_inf);
  cfg.eps_2 = j.value("eps_2", cfg.eps_2);
  cfg.kappa = j.value("kappa", cfg.kappa);
  cfg.sigma0 = j.value("sigma0", cfg.sigma0);
  cfg.eta_d = j.value("eta_d", cfg.eta_d);
  cfg.eta_i = j.value("eta_i", cfg.eta_i);
  cfg.early_stop = j.value("early_stop", cfg.early_stop);
  cfg.keep_ball = j.value("keep_ball", cfg.keep_ball);
  if (j.contains("clamp_range")) {
    auto v = j["clamp_range"].get<std::vector<double>>();
    if (v.size() != 2) throw ConfigError("clamp_range must be [lo, hi]");
    cfg.clamp_range = std::make_pair(v[0], v[1]);
  }
  return cfg;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  const auto& data = j.at("dataset");
  if (data.contains("synthetic")) {
    SyntheticSpec s;
    const auto& sj = data["synthetic"];
    s.n_per_class = sj.value("n_per_class", s.n_per_class);
    s.length = sj.value("length", s.length);
    s.bump_width = sj.value("bump_width", s.bump_width);
    s.noise_std = sj.value("noise_std", s.noise_std);
    s.seed = sj.value("seed", s.seed);
    cfg.data.synthetic = s;
  } else {
    cfg.data.train_path = data.at("train").get<std::string>();
    cfg.data.test_path = data.at("test").get<std::string>();
    cfg.data.znorm = data.value("znorm", true);
  }
  const auto& mj = j.at("model");
  cfg.model.architecture = parse_architecture(mj.at("architecture").get<std::string>());
  cfg.model.hidden = mj.value("hidden", cfg.model.hidden);
  cfg.model.train.optimizer =
      parse_optimizer(mj.value("optimizer", std::string("adam")));
  cfg.model.train.learning_rate = mj.value("learning_rate", 0.01);
  cfg.model.train.epochs = mj.value("epochs", 100);
  cfg.model.train.batch_size = mj.value("batch_size", 32);
  cfg.model.train.seed = mj.value("seed", std::uint64_t{0});

  for (const auto& aj : j.at("attacks"))
    cfg.attacks.push_back(attack_config_from_json(aj));
  for (const auto& rj : j.at("regularizers")) {
    Regularizer r;
    r.kind = parse_regularizer(rj.at("kind").get<std::string>());
    r.lambda = rj.value("lambda", 1e-5);
    cfg.regularizers.push_back(r);
  }
  if (cfg.attacks.empty() || cfg.regularizers.empty())
    throw ConfigError("experiment: attack and regularizer grids must be non-empty");
  cfg.output_dir = j.at("output_dir").get<std::string>();
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.epsilon_zero = j.value("epsilon_zero", 1e-6);
  return cfg;
}

/// FNV-1a over the canonical config dump; duration and job count never
/// enter the hash.
inline std::string config_hash(const nlohmann::json& config) {
  std::string s = config.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string cell_name(const AttackConfig& a, const Regularizer& r) {
  return attack_name(a) + "__" + std::string(regularizer_name(r.kind));
}

/// Run manifest: per-cell status for resumable grids.
struct RunManifest {
  std::string hash;
  std::string version = kVersion;
  std::map<std::string, std::string> status;  // cell -> pending|done|failed
  std::map<std::string, double> durations;
  std::map<std::string, std::string> finished_at;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config_hash"] = hash;
    j["version"] = version;
    nlohmann::json cells;
    for (const auto& [name, st] : status) {
      nlohmann::json c;
      c["status"] = st;
      if (auto it = durations.find(name); it != durations.end())
        c["duration_s"] = it->second;
      if (auto it = finished_at.find(name); it != finished_at.end())
        c["finished_at"] = it->second;
      cells[name] = c;
    }
    j["cells"] = cells;
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.hash = j.value("config_hash", "");
    m.version = j.value("version", "");
    if (j.contains("cells"))
      for (auto it = j["cells"].begin(); it != j["cells"].end(); ++it) {
        m.status[it.key()] = it.value().value("status", "pending");
        if (it.value().contains("duration_s"))
          m.durations[it.key()] = it.value()["duration_s"].get<double>();
        if (it.value().contains("finished_at"))
          m.finished_at[it.key()] = it.value()["finished_at"].get<std::string>();
      }
    return m;
  }
};

inline std::string manifest_path(const std::string& output_dir) {
  return (std::filesystem::path(output_dir) / "manifest.json").string();
}

inline void save_manifest(const std::string& output_dir, const RunManifest& m) {
  std::ofstream out(manifest_path(output_dir), std::ios::binary);
  if (!out) throw DataError("cannot write manifest in " + output_dir);
  out << m.to_json().dump(2) << '\n';
}

inline std::optional<RunManifest> load_manifest(const std::string& output_dir) {
  std::ifstream in(manifest_path(output_dir));
  if (!in) return std::nullopt;
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw ConfigError("corrupt manifest in " + output_dir);
  return RunManifest::from_json(j);
}

inline std::string timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// Assembles report rows from outcome files (plus their meta sidecars),
/// rejecting duplicate cells. Every aggregate is recomputed from the
/// per-sample records; nothing is carried over from the attack loop.
inline std::vector<ReportRow> build_report(const std::vector<std::string>& outcome_paths) {
  if (outcome_paths.empty()) throw ReportError("report: no outcome files given");
  std::vector<ReportRow> rows;
  std::map<std::string, std::string> seen;  // cell key -> path
  for (const auto& path : outcome_paths) {
    std::vector<SampleRecord> records = read_outcomes(path);
    CellMeta meta = read_cell_meta(path);
    std::string key = meta.model + "|" + meta.attack + "|" + meta.regularizer;
    if (auto it = seen.find(key); it != seen.end())
      throw ReportError("duplicate cell '" + key + "' in " + path + " and " +
                        it->second);
    seen[key] = path;
    std::vector<OutcomeSummary> summaries;
    summaries.reserve(records.size());
    for (const auto& r : records) summaries.push_back(r.summary());
    ReportRow row;
    row.model = meta.model;
    row.attack = meta.attack;
    row.regularizer = meta.regularizer;
    row.metrics = aggregate(summaries, meta.duration_seconds);
    rows.push_back(std::move(row));
  }
  return rows;
}

struct GridRunResult {
  std::vector<ReportRow> rows;
  int cells_run = 0;
  int cells_skipped = 0;
};

/// Loads or generates the dataset named by the experiment config.
inline Dataset experiment_dataset(const ExperimentConfig& cfg) {
  if (cfg.data.synthetic) return gen_synthetic(*cfg.data.synthetic);
  Dataset ds = load_dataset(cfg.data.train_path, cfg.data.test_path);
  if (cfg.data.znorm) ds = z_normalize(ds);
  return ds;
}

/// Executes every (attack x regularizer) cell, resuming from the
/// manifest when one exists. Adaptive attacks accept only the asl0
/// regularizer (or none, the inert mode); other pairings are rejected
/// up front so the manifest never contains an unrunnable cell.
inline GridRunResult run_grid(const ExperimentConfig& cfg,
                              const nlohmann::json& raw_config, int jobs,
                              std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const std::string hash = config_hash(raw_config);

  // validate the full grid before touching the manifest
  std::vector<std::pair<AttackConfig, Regularizer>> cells;
  for (const auto& a : cfg.attacks)
    for (const auto& r : cfg.regularizers) {
      AttackConfig cell_cfg = a;
      cell_cfg.regularizer = r;
      cell_cfg.epsilon_zero = cfg.epsilon_zero;
      cell_cfg.seed = cfg.seed;
      validate_config(cell_cfg);
      cells.emplace_back(cell_cfg, r);
    }

  RunManifest manifest;
  if (auto existing = load_manifest(cfg.output_dir)) {
    if (existing->hash != hash)
      throw ConfigError("output dir " + cfg.output_dir +
                        " holds a manifest for a different config; refusing to mix");
    manifest = *existing;
  } else {
    manifest.hash = hash;
  }
  for (const auto& [cell_cfg, r] : cells)
    manifest.status.emplace(cell_name(cell_cfg, r), "pending");
  save_manifest(cfg.output_dir, manifest);

  bool any_pending = false;
  for (const auto& [cell_cfg, r] : cells) {
    std::string name = cell_name(cell_cfg, r);
    std::string path = (fs::path(cfg.output_dir) / (name + ".jsonl")).string();
    if (manifest.status[name] != "done" || !fs::exists(path)) any_pending = true;
  }

  Dataset ds;
  Model model;
  if (any_pending) {
    ds = experiment_dataset(cfg);
    model = train(build_model(cfg.model.architecture, ds.length,
                              static_cast<std::size_t>(ds.num_classes),
                              cfg.model.train.seed, cfg.model.hidden),
                  ds, cfg.model.train)
                .model;
  }
  const std::string model_label = architecture_name(cfg.model.architecture);

  GridRunResult result;
  std::vector<std::string> outcome_paths;
  for (const auto& [cell_cfg, r] : cells) {
    std::string name = cell_name(cell_cfg, r);
    std::string path = (fs::path(cfg.output_dir) / (name + ".jsonl")).string();
    outcome_paths.push_back(path);
    if (manifest.status[name] == "done" && fs::exists(path)) {
      ++result.cells_skipped;
      continue;
    }
    if (log) *log << "[grid] running " << name << "\n";
    try {
      CellResult cell = run_cell(model, ds.test, cell_cfg, jobs);
      write_outcomes(path, cell.records);
      CellMeta meta;
      meta.model = model_label;
      meta.attack = attack_name(cell_cfg);
      meta.regularizer = regularizer_name(r.kind);
      meta.duration_seconds = cell.duration_seconds;
      meta.n_samples = cell.records.size();
      meta.config_hash = hash;
      write_cell_meta(path, meta);
      manifest.status[name] = "done";
      manifest.durations[name] = cell.duration_seconds;
      manifest.finished_at[name] = timestamp_utc();
      ++result.cells_run;
    } catch (const Error&) {
      manifest.status[name] = "failed";
      save_manifest(cfg.output_dir, manifest);
      throw;
    }
    save_manifest(cfg.output_dir, manifest);
  }

  result.rows = build_report(outcome_paths);
  std::ofstream csv((fs::path(cfg.output_dir) / "report.csv").string(),
                    std::ios::binary);
  csv << report_csv(result.rows);
  std::ofstream js((fs::path(cfg.output_dir) / "report.json").string(),
                   std::ios::binary);
  js << report_json(result.rows).dump(2) << '\n';
  std::ofstream cmp((fs::path(cfg.output_dir) / "comparison.json").string(),
                    std::ios::binary);
  cmp << comparison_json(result.rows).dump(2) << '\n';
  return result;
}

}  // namespace tsadv
