#include "allmatch/cat.hpp"

#include <algorithm>
#include <stdexcept>

namespace allmatch {

GlobalConfidenceEma::GlobalConfidenceEma(
    int num_classes, double momentum,
    std::optional<std::pair<double, double>> clamp_range)
    : momentum_(momentum), clamp_range_(clamp_range) {
  if (num_classes < 1)
    throw std::invalid_argument("GlobalConfidenceEma: num_classes < 1");
  if (!(momentum >= 0.0 && momentum <= 1.0))
    throw std::invalid_argument("GlobalConfidenceEma: momentum outside [0,1]");
  if (clamp_range_) {
    auto [lo, hi] = *clamp_range_;
    if (!(0.0 <= lo && lo <= hi && hi <= 1.0))
      throw std::invalid_argument("GlobalConfidenceEma: bad clamp range");
  }
  tau_ = apply_clamp(1.0 / static_cast<double>(num_classes));
}

double GlobalConfidenceEma::apply_clamp(double tau) const {
  if (!clamp_range_) return tau;
  return std::clamp(tau, clamp_range_->first, clamp_range_->second);
}

void GlobalConfidenceEma::update(std::span<const ProbVector> weak_probs) {
  if (weak_probs.empty())
    throw std::invalid_argument("GlobalConfidenceEma::update: empty batch");
  double mean_conf = 0.0;
  for (const ProbVector& p : weak_probs) mean_conf += p.max();
  mean_conf /= static_cast<double>(weak_probs.size());
  tau_ = apply_clamp(momentum_ * tau_ + (1.0 - momentum_) * mean_conf);
}

CatState::CatState(int num_classes, double momentum,
                   std::optional<std::pair<double, double>> clamp_range)
    : num_classes_(num_classes),
      global_(num_classes, momentum, clamp_range),
      class_thresholds_(num_classes, global_.value()) {}

void CatState::update_global(std::span<const ProbVector> weak_probs) {
  global_.update(weak_probs);
}

void CatState::update_local(std::span<const double> weight_norms) {
  if (static_cast<int>(weight_norms.size()) != num_classes_)
    throw std::invalid_argument("CatState::update_local: norm count mismatch");
  double max_norm = 0.0;
  for (double n : weight_norms) {
    if (n < 0.0)
      throw std::invalid_argument("CatState::update_local: negative norm");
    max_norm = std::max(max_norm, n);
  }
  const double tau = global_.value();
  if (max_norm == 0.0) {
    // Degenerate start (all-zero classifier): no per-class signal yet.
    std::fill(class_thresholds_.begin(), class_thresholds_.end(), tau);
    return;
  }
  for (int c = 0; c < num_classes_; ++c)
    class_thresholds_[c] = tau * (weight_norms[c] / max_norm);
}

void CatState::restore(double tau, std::vector<double> class_thresholds) {
  if (static_cast<int>(class_thresholds.size()) != num_classes_)
    throw std::invalid_argument("CatState::restore: threshold count mismatch");
  global_.restore(tau);
  class_thresholds_ = std::move(class_thresholds);
}

int CatState::mask(const ProbVector& p_tilde) const {
  if (p_tilde.size() != num_classes_)
    throw std::invalid_argument("CatState::mask: class count mismatch");
  return p_tilde.max() >= class_thresholds_[p_tilde.argmax()] ? 1 : 0;
}

}  // namespace allmatch
