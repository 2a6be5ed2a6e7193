#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "allmatch/prob.hpp"

namespace allmatch {

/// EMA of batch-mean confidence, starting at 1/C, optionally clamped into a
/// fixed range after every update. This is the global learning-status
/// estimate shared by the class-specific threshold and the FreeMatch-style
/// global threshold.
class GlobalConfidenceEma {
 public:
  GlobalConfidenceEma(int num_classes, double momentum,
                      std::optional<std::pair<double, double>> clamp_range);

  /// tau <- m*tau + (1-m)*mean_i max(p_i), then clamp. Batch must be
  /// nonempty and hold raw (pre-alignment) weak-view predictions.
  void update(std::span<const ProbVector> weak_probs);

  double value() const { return tau_; }
  double momentum() const { return momentum_; }
  const std::optional<std::pair<double, double>>& clamp_range() const {
    return clamp_range_;
  }
  void restore(double tau) { tau_ = tau; }

 private:
  double apply_clamp(double tau) const;

  double tau_;
  double momentum_;
  std::optional<std::pair<double, double>> clamp_range_;
};

/// Class-specific adaptive threshold: a global confidence EMA scaled per
/// class by the relative L2 norm of that class's (EMA) classifier weights.
/// State is O(C); nothing per-sample is ever stored.
class CatState {
 public:
  CatState(int num_classes, double momentum,
           std::optional<std::pair<double, double>> clamp_range = std::nullopt);

  /// Global estimation step (EMA over batch-mean max confidence).
  void update_global(std::span<const ProbVector> weak_probs);

  /// Local adjustment: threshold(c) = tau * |W_c| / max_c' |W_c'|. All-zero
  /// norms fall back to the unscaled global threshold.
  void update_local(std::span<const double> weight_norms);

  /// 1 iff max(p) >= threshold(argmax(p)); argmax ties go to the lowest
  /// class index and the comparison is inclusive.
  int mask(const ProbVector& p_tilde) const;

  double tau_global() const { return global_.value(); }
  double momentum() const { return global_.momentum(); }
  int num_classes() const { return num_classes_; }
  const std::optional<std::pair<double, double>>& clamp_range() const {
    return global_.clamp_range();
  }
  const std::vector<double>& class_thresholds() const {
    return class_thresholds_;
  }

  /// Reinstate checkpointed values. Thresholds are recomputed from the EMA
  /// classifier norms at the top of every iteration, so restoring them only
  /// matters for state inspected before the first resumed step.
  void restore(double tau, std::vector<double> class_thresholds);

 private:
  int num_classes_;
  GlobalConfidenceEma global_;
  std::vector<double> class_thresholds_;
};

}  // namespace allmatch
