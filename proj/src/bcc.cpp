#include "allmatch/bcc.hpp"

#include <algorithm>
#include <stdexcept>

namespace allmatch {

namespace {
constexpr double kLogClamp = 1e-12;
}

BccState::BccState(int num_classes, double momentum, int cap)
    : num_classes_(num_classes), momentum_(momentum), cap_(cap) {
  if (num_classes < 1) throw std::invalid_argument("BccState: num_classes < 1");
  if (cap < 1 || cap > num_classes)
    throw std::invalid_argument("BccState: cap outside [1, C]");
  if (!(momentum >= 0.0 && momentum <= 1.0))
    throw std::invalid_argument("BccState: momentum outside [0,1]");
  mu_.resize(num_classes);
  for (int k = 1; k <= num_classes; ++k)
    mu_[k - 1] = static_cast<double>(k) / static_cast<double>(num_classes);
}

void BccState::update_mu(std::span<const ProbVector> weak_probs_tilde) {
  if (weak_probs_tilde.empty())
    throw std::invalid_argument("BccState::update_mu: empty batch");
  std::vector<double> batch_mean(num_classes_, 0.0);
  for (const ProbVector& p : weak_probs_tilde) {
    if (p.size() != num_classes_)
      throw std::invalid_argument("BccState::update_mu: class count mismatch");
    // Prefix sums over the descending ranking give all top-k masses at once.
    std::vector<int> order = topk_indices(p, num_classes_);
    double prefix = 0.0;
    for (int k = 1; k <= num_classes_; ++k) {
      prefix += p[order[k - 1]];
      batch_mean[k - 1] += prefix;
    }
  }
  const double inv_b = 1.0 / static_cast<double>(weak_probs_tilde.size());
  for (int k = 0; k < num_classes_; ++k)
    mu_[k] = momentum_ * mu_[k] + (1.0 - momentum_) * batch_mean[k] * inv_b;
}

int BccState::select_k(const ProbVector& p_tilde, int confident) const {
  if (p_tilde.size() != num_classes_)
    throw std::invalid_argument("BccState::select_k: class count mismatch");
  if (confident) return 1;
  std::vector<int> order = topk_indices(p_tilde, num_classes_);
  double prefix = 0.0;
  for (int k = 1; k <= cap_; ++k) {
    prefix += p_tilde[order[k - 1]];
    if (prefix >= mu_[k - 1]) return k;
  }
  return cap_;
}

void BccState::restore_mu(std::vector<double> mu) {
  if (static_cast<int>(mu.size()) != num_classes_)
    throw std::invalid_argument("BccState::restore_mu: size mismatch");
  mu_ = std::move(mu);
}

DivisionPair binary_division(const ProbVector& p_tilde, const ProbVector& q,
                             int k) {
  if (p_tilde.size() != q.size())
    throw std::invalid_argument("binary_division: class count mismatch");
  if (k < 1 || k > p_tilde.size())
    throw std::invalid_argument("binary_division: k out of range");

  std::vector<int> candidates = topk_indices(p_tilde, k);
  std::vector<char> in_set(p_tilde.size(), 0);
  for (int c : candidates) in_set[c] = 1;

  DivisionPair pair;
  pair.weak.k = pair.strong.k = k;
  pair.weak.candidate_set = candidates;
  pair.strong.candidate_set = std::move(candidates);
  for (int c = 0; c < p_tilde.size(); ++c) {
    if (in_set[c]) {
      pair.weak.candidate_mass += p_tilde[c];
      pair.strong.candidate_mass += q[c];
    } else {
      pair.weak.negative_mass += p_tilde[c];
      pair.strong.negative_mass += q[c];
    }
  }
  return pair;
}

double bcc_loss(std::span<const DivisionPair> batch) {
  if (batch.empty()) throw std::invalid_argument("bcc_loss: empty batch");
  double total = 0.0;
  for (const DivisionPair& pair : batch)
    total += binary_cross_entropy(pair.weak.candidate_mass,
                                  pair.weak.negative_mass,
                                  pair.strong.candidate_mass,
                                  pair.strong.negative_mass);
  return total / static_cast<double>(batch.size());
}

std::vector<double> bcc_logit_grad(const ProbVector& q,
                                   const DivisionPair& pair) {
  const int num_classes = q.size();
  std::vector<char> in_set(num_classes, 0);
  for (int c : pair.weak.candidate_set) in_set[c] = 1;

  // Gradients of the clamped loss with respect to the two masses; zero in
  // the clamped region so finite differences agree exactly.
  const double cs = pair.strong.candidate_mass;
  const double ns = pair.strong.negative_mass;
  const double g_cand = cs > kLogClamp ? -pair.weak.candidate_mass / cs : 0.0;
  const double g_neg = ns > kLogClamp ? -pair.weak.negative_mass / ns : 0.0;

  double weighted = 0.0;
  for (int c = 0; c < num_classes; ++c)
    weighted += q[c] * (in_set[c] ? g_cand : g_neg);

  std::vector<double> grad(num_classes);
  for (int c = 0; c < num_classes; ++c)
    grad[c] = q[c] * ((in_set[c] ? g_cand : g_neg) - weighted);
  return grad;
}

}  // namespace allmatch
