// Command-line front end for the AllMatch training engine.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "allmatch/config.hpp"
#include "allmatch/gradcheck.hpp"
#include "allmatch/harness.hpp"

namespace {

using allmatch::ConfigError;
using allmatch::TrainConfig;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed value '" + item + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

std::vector<std::string> parse_token_list(const std::string& csv) {
  std::vector<std::string> tokens;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) tokens.push_back(item);
  }
  return tokens;
}

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "allmatch_out";
  std::string seeds_csv;
  std::string resume_path;
  std::int64_t stop_at = 0;
};

int cmd_train(const TrainArgs& args) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  std::filesystem::create_directories(args.out_dir);

  if (!args.resume_path.empty()) {
    std::ifstream in(args.resume_path);
    if (!in) throw ConfigError("cannot open checkpoint: " + args.resume_path);
    json ckpt = json::parse(in);
    std::unique_ptr<allmatch::Trainer> trainer =
        allmatch::trainer_from_checkpoint(ckpt);
    const std::uint64_t seed = trainer->seed();
    const std::string metrics_path =
        args.out_dir + "/metrics_seed" + std::to_string(seed) + ".csv";
    const bool fresh = !std::filesystem::exists(metrics_path);
    std::ofstream csv(metrics_path, std::ios::app);
    if (fresh) allmatch::write_metrics_header(csv);
    allmatch::DriveOptions options;
    options.metrics_csv = &csv;
    options.checkpoint_path =
        args.out_dir + "/checkpoint_seed" + std::to_string(seed) + ".json";
    options.checkpoint_every = trainer->config().checkpoint_every;
    try {
      allmatch::drive(*trainer, options);
    } catch (const allmatch::TrainingAbort& abort) {
      std::cerr << "training aborted: " << abort.what() << "\n"
                << "diagnostic: " << metrics_path << "\n";
      return kExitRuntime;
    }
    std::cout << "resumed to iteration " << trainer->iteration()
              << ", final EMA accuracy " << trainer->evaluate() << "\n";
    return kExitOk;
  }

  TrainConfig cfg = allmatch::load_config_file(args.config_path, args.overrides);
  std::vector<std::uint64_t> seeds =
      args.seeds_csv.empty() ? cfg.seeds : parse_seed_list(args.seeds_csv);
  cfg.seeds = seeds;

  allmatch::ExperimentSummary summary =
      allmatch::run_experiment(cfg, seeds, args.out_dir, args.stop_at);
  const double wall =
      std::chrono::duration<double>(clock::now() - start).count();

  json summary_json = allmatch::summary_to_json(summary, cfg);
  summary_json["wall_clock_seconds"] = wall;
  const std::string summary_path = args.out_dir + "/summary.json";
  std::ofstream out(summary_path);
  out << summary_json.dump(2) << "\n";
  out.close();

  bool any_failed = false;
  for (const allmatch::SeedResult& r : summary.seeds) {
    if (r.failed) {
      any_failed = true;
      std::cerr << "seed " << r.seed << " failed: " << r.error << "\n";
    } else {
      std::cout << "seed " << r.seed << ": final accuracy "
                << r.final_test_accuracy << "\n";
    }
  }
  std::cout << "mean " << summary.mean_accuracy << " std "
            << summary.std_accuracy << "\n"
            << "summary: " << summary_path << "\n";
  if (any_failed) {
    std::cerr << "diagnostic: " << summary_path << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

struct CompareArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "allmatch_out";
  std::string seeds_csv;
  std::string strategies_csv;
};

int cmd_compare(const CompareArgs& args) {
  TrainConfig base = allmatch::load_config_file(args.config_path, args.overrides);
  std::vector<std::string> strategies = parse_token_list(args.strategies_csv);
  if (strategies.empty()) throw ConfigError("no strategies given");
  std::vector<std::uint64_t> seeds =
      args.seeds_csv.empty() ? base.seeds : parse_seed_list(args.seeds_csv);

  std::filesystem::create_directories(args.out_dir);
  const std::string table_path = args.out_dir + "/compare.csv";
  std::ofstream table(table_path);
  table << "strategy,lambda_b,mean_acc,std_acc,failed_seeds\n";

  for (const std::string& strategy : strategies) {
    for (double lambda_b : {0.0, 1.0}) {
      TrainConfig cfg = base;
      cfg.strategy = strategy;
      cfg.lambda_b = lambda_b;
      cfg.validate();
      const std::string cell_dir = args.out_dir + "/" + strategy + "_b" +
                                   (lambda_b > 0.0 ? "1" : "0");
      allmatch::ExperimentSummary summary =
          allmatch::run_experiment(cfg, seeds, cell_dir);
      int failed = 0;
      for (const allmatch::SeedResult& r : summary.seeds) failed += r.failed;
      char mean_buf[32], std_buf[32];
      std::snprintf(mean_buf, sizeof(mean_buf), "%.6f", summary.mean_accuracy);
      std::snprintf(std_buf, sizeof(std_buf), "%.6f", summary.std_accuracy);
      table << strategy << ',' << lambda_b << ',' << mean_buf << ',' << std_buf
            << ',' << failed << '\n';
      table.flush();
      std::cout << strategy << " lambda_b=" << lambda_b << ": mean "
                << mean_buf << " std " << std_buf << (failed ? " (failures)" : "")
                << "\n";
    }
  }
  std::cout << "table: " << table_path << "\n";
  return kExitOk;
}

struct GradcheckArgs {
  int input_dim = 3;
  std::string hidden_csv = "8,6";
  int num_classes = 4;
  int batch = 6;
  int draws = 5;
  std::uint64_t seed = 1;
  double inject_error = 0.0;
};

int cmd_gradcheck(const GradcheckArgs& args) {
  std::vector<int> hidden;
  for (const std::string& tok : parse_token_list(args.hidden_csv))
    hidden.push_back(std::stoi(tok));

  const double tolerance = 1e-4;
  bool ok = true;
  for (allmatch::LossKind kind :
       {allmatch::LossKind::kSupervised, allmatch::LossKind::kUnsupervised,
        allmatch::LossKind::kBcc}) {
    allmatch::GradCheckResult worst;
    for (int d = 0; d < args.draws; ++d) {
      allmatch::GradCheckResult r = allmatch::gradcheck_loss(
          kind, args.input_dim, hidden, args.num_classes, args.batch,
          args.seed + static_cast<std::uint64_t>(d) * 1000003ULL, 1e-5,
          args.inject_error);
      if (r.max_rel_error > worst.max_rel_error) worst = r;
    }
    std::printf("%-12s max relative error %.3e", allmatch::loss_kind_name(kind),
                worst.max_rel_error);
    if (worst.max_rel_error >= tolerance) {
      ok = false;
      std::printf("  FAIL worst at %s (analytic %.6e, numeric %.6e)",
                  worst.worst_coordinate.c_str(), worst.worst_analytic,
                  worst.worst_numeric);
    }
    std::printf("\n");
  }
  return ok ? kExitOk : kExitRuntime;
}

struct GenDataArgs {
  std::string out_path;
  std::string kind = "gaussian";
  int num_classes = 5;
  int dim = 2;
  int per_class_labeled = 4;
  int per_class_unlabeled = 500;
  double separation = 4.0;
  int test_per_class = 500;
  int head_labeled = 1500;
  int head_unlabeled = 3000;
  double gamma = 100.0;
  std::uint64_t seed = 1;
};

int cmd_gen_data(const GenDataArgs& args) {
  allmatch::DatasetConfig cfg;
  cfg.kind = args.kind;
  cfg.num_classes = args.num_classes;
  cfg.dim = args.dim;
  cfg.per_class_labeled = args.per_class_labeled;
  cfg.per_class_unlabeled = args.per_class_unlabeled;
  cfg.separation = args.separation;
  cfg.test_per_class = args.test_per_class;
  cfg.head_labeled = args.head_labeled;
  cfg.head_unlabeled = args.head_unlabeled;
  cfg.gamma = args.gamma;
  if (cfg.kind == "csv") throw ConfigError("gen-data cannot emit kind csv");
  allmatch::SslDataset ds = allmatch::build_dataset(cfg, args.seed);
  for (const std::string& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  try {
    allmatch::save_csv(ds, args.out_path);
  } catch (const std::runtime_error& e) {
    std::cerr << e.what() << "\n";
    return kExitRuntime;
  }
  std::cout << "wrote " << ds.labeled.size() << " labeled, "
            << ds.unlabeled.size() << " unlabeled, " << ds.test.size()
            << " test rows to " << args.out_path << "\n";
  return kExitOk;
}

struct ReplayArgs {
  std::string metrics_path;
};

int cmd_replay_metrics(const ReplayArgs& args) {
  std::ifstream in(args.metrics_path);
  if (!in) throw ConfigError("cannot open metrics file: " + args.metrics_path);
  std::string header;
  std::getline(in, header);
  if (header.rfind("iteration,loss_s,loss_u,loss_b,loss_total", 0) != 0)
    throw ConfigError("not a metrics csv: " + args.metrics_path);

  std::string line;
  std::size_t rows = 0, violations = 0;
  double final_util = 0.0, final_tau = 0.0, final_test = NAN;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ','))
      f.push_back(field.empty() ? NAN : std::stod(field));
    if (f.size() < 13) throw ConfigError("short metrics row in " + args.metrics_path);
    ++rows;
    const double util = f[7], sel = f[8], drop = f[9], top5 = f[10],
                 binary = f[11];
    for (double ratio : {util, sel, drop, top5, binary})
      if (!(ratio >= -1e-12 && ratio <= 1.0 + 1e-12)) ++violations;
    const double top1 = util * sel + (1.0 - util) * drop;
    if (binary + 1e-9 < top1) {
      ++violations;
      std::cerr << "violation at iteration " << static_cast<long long>(f[0])
                << ": binary_pl_acc " << binary << " < top-1 " << top1 << "\n";
    }
    final_util = util;
    final_tau = f[6];
    if (f.size() >= 14 && !std::isnan(f[13])) final_test = f[13];
  }
  std::cout << rows << " rows, final tau_global " << final_tau
            << ", final utilization " << final_util;
  if (!std::isnan(final_test)) std::cout << ", last test accuracy " << final_test;
  std::cout << "\n";
  if (violations) {
    std::cerr << violations << " invariant violations\n";
    return kExitRuntime;
  }
  std::cout << "all invariants hold\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AllMatch: semi-supervised learning with class-specific "
               "adaptive thresholds and binary classification consistency"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "run a training experiment");
  train->add_option("--config", train_args.config_path, "config JSON path");
  train->add_option("--set", train_args.overrides,
                    "dotted-key override, e.g. --set strategy=fixmatch");
  train->add_option("--out", train_args.out_dir, "output directory");
  train->add_option("--seeds", train_args.seeds_csv, "comma-separated seeds");
  train->add_option("--resume", train_args.resume_path,
                    "checkpoint JSON to continue from");
  train->add_option("--stop-at", train_args.stop_at,
                    "interrupt at this iteration, leaving a checkpoint");

  CompareArgs compare_args;
  CLI::App* compare = app.add_subcommand(
      "compare", "strategy comparison with and without the BCC term");
  compare->add_option("--config", compare_args.config_path, "config JSON path")
      ->required();
  compare->add_option("--set", compare_args.overrides, "dotted-key override");
  compare->add_option("--out", compare_args.out_dir, "output directory");
  compare->add_option("--seeds", compare_args.seeds_csv, "comma-separated seeds");
  compare
      ->add_option("--strategies", compare_args.strategies_csv,
                   "comma-separated strategy tokens")
      ->required();

  GradcheckArgs grad_args;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of every loss gradient");
  gradcheck->add_option("--input-dim", grad_args.input_dim, "input dimension");
  gradcheck->add_option("--hidden", grad_args.hidden_csv, "hidden widths");
  gradcheck->add_option("--classes", grad_args.num_classes, "class count");
  gradcheck->add_option("--batch", grad_args.batch, "batch size");
  gradcheck->add_option("--draws", grad_args.draws, "random draws per loss");
  gradcheck->add_option("--seed", grad_args.seed, "base seed");
  gradcheck->add_option("--inject-error", grad_args.inject_error,
                        "corrupt one analytic gradient entry (test fixture)");

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset CSV");
  gen->add_option("--out", gen_args.out_path, "output CSV path")->required();
  gen->add_option("--kind", gen_args.kind, "gaussian | long_tailed");
  gen->add_option("--classes", gen_args.num_classes, "class count");
  gen->add_option("--dim", gen_args.dim, "feature dimension");
  gen->add_option("--per-class-labeled", gen_args.per_class_labeled, "");
  gen->add_option("--per-class-unlabeled", gen_args.per_class_unlabeled, "");
  gen->add_option("--separation", gen_args.separation, "cluster separation");
  gen->add_option("--test-per-class", gen_args.test_per_class, "");
  gen->add_option("--head-labeled", gen_args.head_labeled, "N1 for long_tailed");
  gen->add_option("--head-unlabeled", gen_args.head_unlabeled,
                  "M1 for long_tailed");
  gen->add_option("--gamma", gen_args.gamma, "imbalance ratio");
  gen->add_option("--seed", gen_args.seed, "generator seed");

  ReplayArgs replay_args;
  CLI::App* replay = app.add_subcommand(
      "replay-metrics", "validate invariants over a metrics CSV");
  replay->add_option("--metrics", replay_args.metrics_path, "metrics CSV path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (train->parsed()) {
      if (train_args.config_path.empty() && train_args.resume_path.empty())
        throw ConfigError("train needs --config or --resume");
      return cmd_train(train_args);
    }
    if (compare->parsed()) return cmd_compare(compare_args);
    if (gradcheck->parsed()) return cmd_gradcheck(grad_args);
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (replay->parsed()) return cmd_replay_metrics(replay_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
