// tsadv: train desk-scale time-series classifiers, attack them with
// PGD/CW variants under L0/L1/L2 regularization, and aggregate the
// outcome metrics into CSV/JSON reports.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 model/data shape
// mismatch, 5 missing/corrupt/duplicate outcome files, 1 anything else.
// Diagnostics go to stderr; stdout stays machine-readable (and silent:
// all outputs are files).

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tsadv/tsadv.hpp"

namespace {

using namespace tsadv;

struct DataArgs {
  std::string synthetic_spec;
  std::string train_path;
  std::string test_path;
  bool no_znorm = false;
};

void add_data_flags(CLI::App* cmd, DataArgs& args) {
  cmd->add_option("--synthetic", args.synthetic_spec,
                  "synthetic dataset spec, e.g. d=64,bump=8,n=200,noise=0.1,seed=1");
  cmd->add_option("--data-train", args.train_path, "training split (TSV/CSV)");
  cmd->add_option("--data-test", args.test_path, "test split (TSV/CSV)");
  cmd->add_flag("--no-znorm", args.no_znorm,
                "skip per-series z-normalization of file datasets");
}

SyntheticSpec parse_synthetic_spec(const std::string& spec, std::uint64_t seed) {
  SyntheticSpec s;
  s.seed = seed;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("bad --synthetic entry '" + item + "' (expected key=value)");
    std::string key = item.substr(0, eq);
    std::string val = item.substr(eq + 1);
    try {
      if (key == "d" || key == "length")
        s.length = std::stoul(val);
      else if (key == "bump")
        s.bump_width = std::stoul(val);
      else if (key == "n")
        s.n_per_class = std::stoi(val);
      else if (key == "noise")
        s.noise_std = std::stod(val);
      else if (key == "seed")
        s.seed = std::stoull(val);
      else
        throw ConfigError("unknown --synthetic key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad --synthetic value '" + item + "'");
    }
  }
  return s;
}

Dataset resolve_dataset(const DataArgs& args, std::uint64_t seed) {
  const bool have_files = !args.train_path.empty() || !args.test_path.empty();
  if (!args.synthetic_spec.empty() && have_files)
    throw ConfigError("--synthetic and --data-train/--data-test are exclusive");
  if (!args.synthetic_spec.empty())
    return gen_synthetic(parse_synthetic_spec(args.synthetic_spec, seed));
  if (args.train_path.empty() || args.test_path.empty())
    throw ConfigError("need --synthetic or both --data-train and --data-test");
  Dataset ds = load_dataset(args.train_path, args.test_path);
  if (!args.no_znorm) ds = z_normalize(ds);
  return ds;
}

int cmd_train(const DataArgs& data_args, const std::string& arch_name,
              std::size_t hidden, const std::string& optimizer, double lr, int epochs,
              int batch_size, std::uint64_t seed, const std::string& out,
              std::string log_path) {
  Dataset ds = resolve_dataset(data_args, seed);
  Architecture arch = parse_architecture(arch_name);
  TrainConfig tc;
  tc.optimizer = parse_optimizer(optimizer);
  tc.learning_rate = lr;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.seed = seed;
  TrainResult result = train(
      build_model(arch, ds.length, static_cast<std::size_t>(ds.num_classes), seed,
                  hidden),
      ds, tc);
  save_model(result.model, out);

  if (log_path.empty()) log_path = out + ".train.json";
  nlohmann::json log;
  log["architecture"] = arch_name;
  log["epochs"] = epochs;
  log["loss_curve"] = result.loss_curve;
  log["final_loss"] = result.loss_curve.back();
  log["train_accuracy"] = result.train_accuracy;
  log["test_accuracy"] = result.test_accuracy;
  log["seed"] = seed;
  std::ofstream lf(log_path, std::ios::binary);
  if (!lf) throw DataError("cannot write training log: " + log_path);
  lf << log.dump(2) << '\n';
  std::cerr << "trained " << arch_name << ": train acc " << result.train_accuracy
            << ", test acc " << result.test_accuracy << "\n";
  return 0;
}

int cmd_attack(const DataArgs& data_args, const std::string& model_path,
               const std::string& attack, const std::string& regularizer,
               double lambda, int iterations, double alpha,
               std::optional<double> eps_inf, std::optional<double> eps_2,
               double kappa, double sigma0, double eta_d, double eta_i,
               double epsilon_zero, bool early_stop, bool keep_ball, int jobs,
               std::uint64_t seed, const std::string& out,
               const std::string& deltas_path) {
  Model model = load_model(model_path);
  Dataset ds = resolve_dataset(data_args, seed);
  if (ds.length != model.input_length)
    throw ShapeError("dataset series length " + std::to_string(ds.length) +
                     " does not match model input length " +
                     std::to_string(model.input_length));
  if (ds.num_classes > static_cast<int>(model.num_classes))
    throw ShapeError("dataset has " + std::to_string(ds.num_classes) +
                     " classes but the model only " +
                     std::to_string(model.num_classes));

  AttackConfig cfg;
  auto [kind, adaptive] = parse_attack(attack);
  cfg.kind = kind;
  cfg.adaptive = adaptive;
  cfg.regularizer = {parse_regularizer(regularizer), lambda};
  cfg.iterations = iterations;
  cfg.alpha = alpha;
  if (eps_inf) cfg.eps_inf = *eps_inf;
  if (eps_2) cfg.eps_2 = *eps_2;
  cfg.kappa = kappa;
  cfg.sigma0 = sigma0;
  cfg.eta_d = eta_d;
  cfg.eta_i = eta_i;
  cfg.epsilon_zero = epsilon_zero;
  cfg.early_stop = early_stop;
  cfg.keep_ball = keep_ball;
  cfg.seed = seed;

  CellResult cell = run_cell(model, ds.test, cfg, jobs, !deltas_path.empty());
  write_outcomes(out, cell.records);
  CellMeta meta;
  meta.model = architecture_name(model.arch);
  meta.attack = attack_name(cfg);
  meta.regularizer = regularizer_name(cfg.regularizer.kind);
  meta.duration_seconds = cell.duration_seconds;
  meta.n_samples = cell.records.size();
  write_cell_meta(out, meta);
  if (!deltas_path.empty()) write_deltas(deltas_path, cell.deltas);

  long n_success = 0;
  for (const auto& r : cell.records) n_success += r.success;
  std::cerr << "attacked " << cell.records.size() << " samples, " << n_success
            << " successes, " << cell.duration_seconds << "s\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_csv,
               const std::string& out_json, const std::string& out_comparison) {
  std::vector<ReportRow> rows = build_report(inputs);
  if (!out_csv.empty()) {
    std::ofstream f(out_csv, std::ios::binary);
    if (!f) throw DataError("cannot write " + out_csv);
    f << report_csv(rows);
  }
  if (!out_json.empty()) {
    std::ofstream f(out_json, std::ios::binary);
    if (!f) throw DataError("cannot write " + out_json);
    f << report_json(rows).dump(2) << '\n';
  }
  if (!out_comparison.empty()) {
    std::ofstream f(out_comparison, std::ios::binary);
    if (!f) throw DataError("cannot write " + out_comparison);
    f << comparison_json(rows).dump(2) << '\n';
  }
  std::cerr << "report: " << rows.size() << " rows\n";
  return 0;
}

int cmd_grid(const std::string& config_path, int jobs) {
  std::ifstream in(config_path);
  if (!in) throw DataError("cannot open experiment config: " + config_path);
  nlohmann::json raw = nlohmann::json::parse(in, nullptr, false);
  if (raw.is_discarded())
    throw ConfigError("experiment config is not valid JSON: " + config_path);
  ExperimentConfig cfg = experiment_from_json(raw);
  GridRunResult res = run_grid(cfg, raw, jobs, &std::cerr);
  std::cerr << "grid: " << res.cells_run << " cells run, " << res.cells_skipped
            << " skipped, report in " << cfg.output_dir << "\n";
  return 0;
}

int cmd_gen_data(std::size_t length, std::size_t bump_width, int n_per_class,
                 double noise_std, std::uint64_t seed, const std::string& out_train,
                 const std::string& out_test, const std::string& delimiter) {
  SyntheticSpec spec;
  spec.length = length;
  spec.bump_width = bump_width;
  spec.n_per_class = n_per_class;
  spec.noise_std = noise_std;
  spec.seed = seed;
  Dataset ds = gen_synthetic(spec);
  char delim = '\t';
  if (delimiter == "comma")
    delim = ',';
  else if (delimiter != "tab")
    throw ConfigError("--delimiter must be tab or comma");
  save_tsv(out_train, ds.train, delim);
  save_tsv(out_test, ds.test, delim);
  std::cerr << "wrote " << ds.train.size() << " train and " << ds.test.size()
            << " test series\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse adversarial attacks on time-series classifiers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tsadv::kVersion));

  // train
  auto* train_cmd = app.add_subcommand("train", "train a victim model");
  DataArgs train_data;
  add_data_flags(train_cmd, train_data);
  std::string arch = "mlp", optimizer = "adam", train_out, train_log;
  std::size_t hidden = 32;
  double lr = 0.01;
  int epochs = 100, batch_size = 32;
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--arch", arch, "logistic|mlp|cnn1d");
  train_cmd->add_option("--hidden", hidden, "mlp hidden width");
  train_cmd->add_option("--optimizer", optimizer, "sgd|adam");
  train_cmd->add_option("--lr", lr, "learning rate");
  train_cmd->add_option("--epochs", epochs);
  train_cmd->add_option("--batch-size", batch_size);
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--out", train_out, "model file to write")->required();
  train_cmd->add_option("--log", train_log,
                        "training log path (default <out>.train.json)");

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "attack a trained model");
  DataArgs attack_data;
  add_data_flags(attack_cmd, attack_data);
  std::string model_path, attack_name_arg = "pgd", reg_name = "none", attack_out;
  std::string deltas_path;
  double lambda = 1e-5, alpha = 0.01, kappa = 0.0;
  double sigma0 = 1.0, eta_d = 0.9, eta_i = 1.1, epsilon_zero = 1e-6;
  std::optional<double> eps_inf, eps_2;
  int iterations = 1000, jobs = 1;
  bool early_stop = false, keep_ball = true;
  std::uint64_t attack_seed = 0;
  attack_cmd->add_option("--model", model_path, "model file")->required();
  attack_cmd->add_option("--attack", attack_name_arg,
                         "pgd|pgd_l2|cw|cw_l2 with optional as_ prefix");
  attack_cmd->add_option("--regularizer", reg_name, "none|l1|l2|asl0");
  attack_cmd->add_option("--lambda", lambda, "regularization coefficient");
  attack_cmd->add_option("--iterations", iterations);
  attack_cmd->add_option("--alpha", alpha, "step size");
  attack_cmd->add_option("--eps-inf", eps_inf, "Linf ball radius (pgd)");
  attack_cmd->add_option("--eps-2", eps_2, "L2 ball radius (pgd_l2/cw_l2)");
  attack_cmd->add_option("--kappa", kappa, "CW confidence margin");
  attack_cmd->add_option("--sigma0", sigma0);
  attack_cmd->add_option("--eta-d", eta_d);
  attack_cmd->add_option("--eta-i", eta_i);
  attack_cmd->add_option("--epsilon-zero", epsilon_zero, "close-to-zero threshold");
  attack_cmd->add_flag("--early-stop", early_stop, "stop at first success");
  attack_cmd->add_flag("--keep-ball,!--no-keep-ball", keep_ball,
                       "keep the ball projection in adaptive variants (default on)");
  attack_cmd->add_option("--jobs", jobs, "parallel sample workers");
  attack_cmd->add_option("--seed", attack_seed);
  attack_cmd->add_option("--out", attack_out, "outcomes JSONL path")->required();
  attack_cmd->add_option("--save-deltas", deltas_path,
                         "binary sidecar of raw perturbations");

  // report
  auto* report_cmd = app.add_subcommand("report", "aggregate outcome files");
  std::vector<std::string> report_inputs;
  std::string out_csv, out_json, out_comparison;
  report_cmd->add_option("--inputs", report_inputs, "outcomes JSONL files")
      ->required();
  report_cmd->add_option("--out-csv", out_csv);
  report_cmd->add_option("--out-json", out_json);
  report_cmd->add_option("--out-comparison", out_comparison);

  // grid
  auto* grid_cmd = app.add_subcommand("grid", "run a full experiment grid");
  std::string grid_config;
  int grid_jobs = 1;
  grid_cmd->add_option("--config", grid_config, "experiment JSON")->required();
  grid_cmd->add_option("--jobs", grid_jobs, "parallel sample workers");

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic benchmark");
  std::size_t gen_length = 64, gen_bump = 8;
  int gen_n = 200;
  double gen_noise = 0.1;
  std::uint64_t gen_seed = 0;
  std::string gen_train, gen_test, gen_delim = "tab";
  gen_cmd->add_option("--length", gen_length);
  gen_cmd->add_option("--bump-width", gen_bump);
  gen_cmd->add_option("--n-per-class", gen_n);
  gen_cmd->add_option("--noise-std", gen_noise);
  gen_cmd->add_option("--seed", gen_seed);
  gen_cmd->add_option("--out-train", gen_train)->required();
  gen_cmd->add_option("--out-test", gen_test)->required();
  gen_cmd->add_option("--delimiter", gen_delim, "tab|comma");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd)
      return cmd_train(train_data, arch, hidden, optimizer, lr, epochs, batch_size,
                       train_seed, train_out, train_log);
    if (*attack_cmd)
      return cmd_attack(attack_data, model_path, attack_name_arg, reg_name, lambda,
                        iterations, alpha, eps_inf, eps_2, kappa, sigma0, eta_d,
                        eta_i, epsilon_zero, early_stop, keep_ball, jobs,
                        attack_seed, attack_out, deltas_path);
    if (*report_cmd)
      return cmd_report(report_inputs, out_csv, out_json, out_comparison);
    if (*grid_cmd) return cmd_grid(grid_config, grid_jobs);
    if (*gen_cmd)
      return cmd_gen_data(gen_length, gen_bump, gen_n, gen_noise, gen_seed, gen_train,
                          gen_test, gen_delim);
  } catch (const tsadv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tsadv::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const tsadv::ShapeError& e) {
    std::cerr << "shape mismatch: " << e.what() << "\n";
    return 4;
  } catch (const tsadv::ReportError& e) {
    std::cerr << "report error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
