#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "allmatch/data.hpp"

namespace allmatch {

/// Raised for malformed or unknown configuration; the CLI maps it to exit 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OptimizerConfig {
  double base_lr = 0.03;
  double momentum = 0.9;
};

struct ModelConfig {
  std::vector<int> hidden_dims = {64, 64};
};

struct DatasetConfig {
  std::string kind = "gaussian";  // gaussian | long_tailed | csv
  int num_classes = 10;
  int dim = 2;
  int per_class_labeled = 4;
  int per_class_unlabeled = 500;
  double separation = 4.0;
  int test_per_class = 500;
  int head_labeled = 1500;    // N_1 (long_tailed)
  int head_unlabeled = 3000;  // M_1 (long_tailed)
  double gamma = 100.0;
  std::string path;  // csv
  AugmentationSpec augment;
};

struct TrainConfig {
  std::string strategy = "allmatch";
  double lambda_u = 1.0;
  double lambda_b = 1.0;
  std::int64_t total_iterations = 10000;
  int batch_labeled = 32;
  int batch_unlabeled = 64;
  double ema_momentum = 0.999;    // m, shared by all scalar EMAs
  double model_ema_decay = 0.999;
  int candidate_cap = 10;  // K
  std::optional<std::pair<double, double>> clamp_range;
  double fixmatch_tau = 0.95;
  double softmatch_n = 2.0;
  OptimizerConfig optimizer;
  ModelConfig model;
  DatasetConfig dataset;
  std::vector<std::uint64_t> seeds = {1};
  std::int64_t eval_every = 500;
  std::int64_t log_every = 50;
  std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only

  void validate() const;

  /// Strict parse: any unknown key raises ConfigError naming it.
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Apply one "dotted.key=value" override onto a config JSON document. The
/// value is parsed as JSON when possible and treated as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

TrainConfig load_config_file(const std::string& path,
                             const std::vector<std::string>& overrides);

/// Dataset for a training run; derived deterministically from the run seed.
SslDataset build_dataset(const DatasetConfig& cfg, std::uint64_t seed);

}  // namespace allmatch
