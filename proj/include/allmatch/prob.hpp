#pragma once

#include <span>
#include <vector>

#include "allmatch/matrix.hpp"

namespace allmatch {

/// A point on the C-class probability simplex. Construction validates that
/// entries lie in [0,1] and sum to 1 within 1e-9.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> values);
  static ProbVector uniform(int num_classes);

  int size() const { return static_cast<int>(values_.size()); }
  double operator[](int c) const { return values_[c]; }
  const std::vector<double>& values() const { return values_; }

  /// Largest entry (the prediction confidence).
  double max() const;
  /// Index of the largest entry; ties go to the lowest class index.
  int argmax() const;

 private:
  std::vector<double> values_;
};

/// Numerically stable softmax (max-subtracted).
ProbVector softmax(std::span<const double> logits);

/// One ProbVector per row of a logits matrix.
std::vector<ProbVector> softmax_rows(const Matrix& logits);

/// H(target, pred) = -sum_c target_c * log(pred_c), with pred clamped below
/// by 1e-12 before the log. For a one-hot target this is -log pred_y.
double cross_entropy(const ProbVector& target, const ProbVector& pred);

/// Same cross-entropy over a two-outcome split given as raw mass pairs.
double binary_cross_entropy(double target_pos, double target_neg,
                            double pred_pos, double pred_neg);

/// Sum of the k largest entries of p. Ties are broken by lower class index.
double topk_mass(const ProbVector& p, int k);

/// Indices of the k largest entries of p in descending order of probability,
/// ties broken by lower class index.
std::vector<int> topk_indices(const ProbVector& p, int k);

/// Distribution alignment state: an EMA of mean weak-view predictions plus a
/// target prior (uniform by default). Aligned prediction is
/// normalize(p * target / running_mean).
class DaState {
 public:
  DaState(int num_classes, double momentum);
  DaState(ProbVector running_mean, ProbVector target, double momentum);

  /// EMA step toward the batch mean of weak-view predictions.
  void update(const ProbVector& batch_mean);

  ProbVector apply(const ProbVector& p) const;

  const ProbVector& running_mean() const { return running_mean_; }
  const ProbVector& target() const { return target_; }
  double momentum() const { return momentum_; }

 private:
  ProbVector running_mean_;
  ProbVector target_;
  double momentum_;
};

/// Elementwise mean of a batch of ProbVectors. Batch must be nonempty.
ProbVector mean_prob(std::span<const ProbVector> batch);

}  // namespace allmatch
