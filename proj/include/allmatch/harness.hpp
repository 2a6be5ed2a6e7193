#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "allmatch/bcc.hpp"
#include "allmatch/config.hpp"
#include "allmatch/data.hpp"
#include "allmatch/nn.hpp"
#include "allmatch/prob.hpp"
#include "allmatch/strategies.hpp"

namespace allmatch {

/// Raised when a step produces a non-finite loss. Training must stop rather
/// than silently poison the EMA states.
struct TrainingAbort : std::runtime_error {
  TrainingAbort(std::int64_t iteration, double loss_s, double loss_u,
                double loss_b);
  std::int64_t iteration;
  double loss_s;
  double loss_u;
  double loss_b;
};

struct MetricsRecord {
  std::int64_t iteration = 0;
  double loss_s = 0.0;
  double loss_u = 0.0;
  double loss_b = 0.0;
  double loss_total = 0.0;
  double learning_rate = 0.0;
  double tau_global = 0.0;
  std::vector<double> class_thresholds;
  double utilization_ratio = 0.0;
  double selected_pl_accuracy = 0.0;
  double dropped_pl_accuracy = 0.0;
  double top5_pl_accuracy = 0.0;
  double binary_pl_accuracy = 0.0;
  double mean_k = 0.0;
  std::optional<double> test_accuracy;
};

/// Mean one-hot cross-entropy over a labeled batch.
double supervised_loss(std::span<const ProbVector> predictions,
                       std::span<const int> labels);

/// Weighted mean of hard-pseudo-label cross-entropies; pseudo-labels are
/// the argmaxes of p_tilde and the denominator is the full batch size.
double unsupervised_loss(std::span<const ProbVector> p_tilde,
                         std::span<const ProbVector> q,
                         std::span<const double> weights);

/// Top-1 accuracy on the test split; logit ties resolve to the lowest class.
double test_accuracy(const Mlp& model, const SslDataset& dataset);

/// One semi-supervised training run over a generated (or loaded) dataset.
/// Deterministic given (config, seed): every random draw is keyed on the
/// seed and the iteration counter, so checkpoint/resume replays exactly.
class Trainer {
 public:
  Trainer(const TrainConfig& config, std::uint64_t seed);

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Run iteration iteration()+1. Throws TrainingAbort on non-finite loss.
  MetricsRecord step();

  bool done() const { return iteration_ >= config_.total_iterations; }
  std::int64_t iteration() const { return iteration_; }

  /// Top-1 accuracy on the test split (EMA model by default).
  double evaluate(bool use_ema = true) const;

  nlohmann::json checkpoint() const;
  void restore(const nlohmann::json& ckpt);

  const TrainConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const SslDataset& dataset() const { return dataset_; }
  const Mlp& model() const { return model_; }
  const EmaModel& ema() const { return *ema_; }
  const ConfidenceStrategy& strategy() const { return *strategy_; }
  const BccState& bcc() const { return bcc_; }
  const DaState& da() const { return da_; }

 private:
  MetricsRecord run_iteration(std::int64_t t);

  TrainConfig config_;
  std::uint64_t seed_;
  SslDataset dataset_;
  std::unique_ptr<BatchIterator> batches_;
  Mlp model_;
  std::unique_ptr<SgdOptimizer> optimizer_;
  std::unique_ptr<EmaModel> ema_;
  DaState da_;
  BccState bcc_;
  std::unique_ptr<ConfidenceStrategy> strategy_;
  std::int64_t iteration_ = 0;

 public:
  // Test hook: when set, runs a throwaway backward pass on the weak view
  // with garbage gradients each step. Parameter trajectories must not move.
  bool probe_weak_view_gradients = false;
  // Test hook: simulate a non-finite loss at this iteration (0 = never).
  std::int64_t debug_abort_at = 0;
};

std::unique_ptr<Trainer> trainer_from_checkpoint(const nlohmann::json& ckpt);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRecord& record);

struct DriveOptions {
  std::ostream* metrics_csv = nullptr;  // header is the caller's business
  std::int64_t stop_at = 0;             // 0 = run to total_iterations
  std::string checkpoint_path;          // nonempty: checkpoint at cadence/end
  std::int64_t checkpoint_every = 0;
};

/// Advance the trainer, collecting one record per log interval (and always
/// at the final iteration, which also forces a test evaluation).
std::vector<MetricsRecord> drive(Trainer& trainer, const DriveOptions& options);

struct RunOutcome {
  std::vector<MetricsRecord> records;
  double final_test_accuracy = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

RunOutcome run_single(const TrainConfig& config, std::uint64_t seed,
                      std::ostream* metrics_csv = nullptr);

struct SeedResult {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double final_test_accuracy = 0.0;
  std::string metrics_path;
  std::string checkpoint_path;
};

struct ExperimentSummary {
  std::vector<SeedResult> seeds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population std; 0 for a single seed
};

/// One run per seed; per-seed metrics CSV and final checkpoint under
/// out_dir when nonempty. A failed seed is recorded and skipped in the
/// mean/std aggregation. stop_at > 0 interrupts every run at that iteration
/// (the checkpoint then allows resuming).
ExperimentSummary run_experiment(const TrainConfig& config,
                                 const std::vector<std::uint64_t>& seeds,
                                 const std::string& out_dir,
                                 std::int64_t stop_at = 0);

nlohmann::json summary_to_json(const ExperimentSummary& summary,
                               const TrainConfig& config);

}  // namespace allmatch
