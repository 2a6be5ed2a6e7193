#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "allmatch/cat.hpp"
#include "allmatch/prob.hpp"

namespace allmatch {

/// Everything a confidence strategy may look at once per iteration:
/// raw weak-view predictions, their aligned versions, and the EMA
/// classifier row norms.
struct StrategyInputs {
  std::span<const ProbVector> raw_weak;
  std::span<const ProbVector> aligned_weak;
  std::span<const double> classifier_norms;
};

/// Common surface for the confidence-handling strategies. `weight` returns
/// the per-sample loss weight in [0,1]; threshold strategies return only
/// {0,1}. `selected` is the analysis-side notion of "kept" used by the
/// utilization and pseudo-label accuracy metrics, and doubles as the
/// confident flag consumed by candidate-count selection.
class ConfidenceStrategy {
 public:
  virtual ~ConfidenceStrategy() = default;

  virtual std::string_view name() const = 0;
  virtual void update(const StrategyInputs& inputs) = 0;
  virtual double weight(const ProbVector& p_tilde) const = 0;
  virtual bool selected(const ProbVector& p_tilde) const {
    return weight(p_tilde) == 1.0;
  }
  /// Class-average threshold analog reported in metrics.
  virtual double threshold_indicator() const = 0;

  /// Per-class thresholds when the strategy has them; empty otherwise.
  virtual std::vector<double> class_threshold_vector() const { return {}; }

  virtual nlohmann::json state_json() const { return nlohmann::json::object(); }
  virtual void restore_state(const nlohmann::json&) {}
};

/// Constant confidence threshold (inclusive comparison).
class FixMatchStrategy final : public ConfidenceStrategy {
 public:
  explicit FixMatchStrategy(double tau);
  std::string_view name() const override { return "fixmatch"; }
  void update(const StrategyInputs&) override {}
  double weight(const ProbVector& p_tilde) const override;
  double threshold_indicator() const override { return tau_; }

 private:
  double tau_;
};

/// Count-based class thresholds: an EMA of per-batch confident pseudo-label
/// counts scales the base threshold per class.
class FlexMatchStrategy final : public ConfidenceStrategy {
 public:
  FlexMatchStrategy(int num_classes, double base_tau, double momentum);
  std::string_view name() const override { return "flexmatch"; }
  void update(const StrategyInputs& inputs) override;
  double weight(const ProbVector& p_tilde) const override;
  double threshold_indicator() const override;
  std::vector<double> class_threshold_vector() const override {
    return class_thresholds();
  }

  std::vector<double> class_thresholds() const;
  const std::vector<double>& counts() const { return counts_; }

  nlohmann::json state_json() const override;
  void restore_state(const nlohmann::json& j) override;

 private:
  int num_classes_;
  double base_tau_;
  double momentum_;
  std::vector<double> counts_;
};

/// Global adaptive threshold: the batch-confidence EMA alone.
class FreeMatchStrategy final : public ConfidenceStrategy {
 public:
  FreeMatchStrategy(int num_classes, double momentum,
                    std::optional<std::pair<double, double>> clamp_range);
  std::string_view name() const override { return "freematch"; }
  void update(const StrategyInputs& inputs) override;
  double weight(const ProbVector& p_tilde) const override;
  double threshold_indicator() const override { return ema_.value(); }

  double tau() const { return ema_.value(); }

  nlohmann::json state_json() const override;
  void restore_state(const nlohmann::json& j) override;

 private:
  GlobalConfidenceEma ema_;
};

/// Gaussian soft weights: lambda = exp(-min(c - mu, 0)^2 / (2 (sigma/n)^2)).
/// mu and sigma track the batch confidence mean/std by EMA. A sample counts
/// as selected for analysis when its confidence reaches mu - sigma, the
/// e^-2 drop criterion at n = 2.
class SoftMatchStrategy final : public ConfidenceStrategy {
 public:
  SoftMatchStrategy(int num_classes, double momentum, double n_divisor);
  std::string_view name() const override { return "softmatch"; }
  void update(const StrategyInputs& inputs) override;
  double weight(const ProbVector& p_tilde) const override;
  bool selected(const ProbVector& p_tilde) const override;
  double threshold_indicator() const override { return mu_ - sigma_; }

  double weight_for_confidence(double confidence) const;
  double mu() const { return mu_; }
  double sigma() const { return sigma_; }

  nlohmann::json state_json() const override;
  void restore_state(const nlohmann::json& j) override;

 private:
  double mu_;
  double sigma_;
  double n_divisor_;
  double momentum_;
};

/// The class-specific adaptive threshold wrapped as a strategy.
class AllMatchStrategy final : public ConfidenceStrategy {
 public:
  AllMatchStrategy(int num_classes, double momentum,
                   std::optional<std::pair<double, double>> clamp_range);
  std::string_view name() const override { return "allmatch"; }
  void update(const StrategyInputs& inputs) override;
  double weight(const ProbVector& p_tilde) const override;
  double threshold_indicator() const override { return cat_.tau_global(); }
  std::vector<double> class_threshold_vector() const override {
    return cat_.class_thresholds();
  }

  const CatState& cat() const { return cat_; }
  CatState& cat() { return cat_; }

  nlohmann::json state_json() const override;
  void restore_state(const nlohmann::json& j) override;

 private:
  CatState cat_;
};

struct StrategyConfig {
  std::string token;  // fixmatch | flexmatch | freematch | softmatch | allmatch
  int num_classes = 0;
  double momentum = 0.999;
  double fixmatch_tau = 0.95;
  double softmatch_n = 2.0;
  std::optional<std::pair<double, double>> clamp_range;
};

std::unique_ptr<ConfidenceStrategy> make_strategy(const StrategyConfig& cfg);

}  // namespace allmatch
