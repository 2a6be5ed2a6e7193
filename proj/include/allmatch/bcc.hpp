#pragma once

#include <span>
#include <vector>

#include "allmatch/prob.hpp"

namespace allmatch {

/// Candidate/negative mass split of one prediction. The candidate set always
/// holds the k classes ranked highest by the weak view.
struct BinaryDivision {
  double candidate_mass = 0.0;
  double negative_mass = 0.0;
  std::vector<int> candidate_set;
  int k = 0;
};

struct DivisionPair {
  BinaryDivision weak;    // over the aligned weak prediction
  BinaryDivision strong;  // over the strong prediction, same candidate set
};

/// Binary classification consistency state: the global top-k confidence EMA
/// mu^k for every k in 1..C, initialized to k/C, plus the candidate cap K.
/// State is O(C) regardless of dataset size.
class BccState {
 public:
  BccState(int num_classes, double momentum, int cap);

  /// mu^k <- m*mu^k + (1-m) * batch mean of top-k mass, for every k.
  void update_mu(std::span<const ProbVector> weak_probs_tilde);

  /// Number of candidate classes for one sample: 1 when the sample passed
  /// the confidence threshold, otherwise the smallest k whose sample top-k
  /// mass reaches the global top-k confidence, capped at K.
  int select_k(const ProbVector& p_tilde, int confident) const;

  const std::vector<double>& mu() const { return mu_; }
  double momentum() const { return momentum_; }
  int cap() const { return cap_; }
  int num_classes() const { return num_classes_; }
  void restore_mu(std::vector<double> mu);

 private:
  int num_classes_;
  double momentum_;
  int cap_;
  std::vector<double> mu_;  // mu_[k-1] is the global top-k confidence
};

/// Split both views' mass at k classes. The candidate set is ranked on
/// p_tilde (ties to the lower index) and reused verbatim for q.
DivisionPair binary_division(const ProbVector& p_tilde, const ProbVector& q,
                             int k);

/// Mean two-class cross-entropy H(b_weak, b_strong) over a batch. Every
/// sample contributes; there is no mask.
double bcc_loss(std::span<const DivisionPair> batch);

/// d(per-sample binary cross-entropy)/d(strong-view logits), given the
/// strong prediction q and the division pair it produced. The weak side is
/// a fixed target.
std::vector<double> bcc_logit_grad(const ProbVector& q,
                                   const DivisionPair& pair);

}  // namespace allmatch
