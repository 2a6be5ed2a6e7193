#include "allmatch/prob.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace allmatch {

namespace {
constexpr double kLogClamp = 1e-12;
constexpr double kDaClamp = 1e-6;
constexpr double kSimplexTol = 1e-9;
}  // namespace

ProbVector::ProbVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty())
    throw std::invalid_argument("ProbVector: empty vector");
  double sum = 0.0;
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("ProbVector: entry outside [0,1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSimplexTol)
    throw std::invalid_argument("ProbVector: entries do not sum to 1");
}

ProbVector ProbVector::uniform(int num_classes) {
  if (num_classes < 1)
    throw std::invalid_argument("ProbVector::uniform: num_classes < 1");
  return ProbVector(std::vector<double>(num_classes, 1.0 / num_classes));
}

double ProbVector::max() const {
  return *std::max_element(values_.begin(), values_.end());
}

int ProbVector::argmax() const {
  // max_element returns the first of equal maxima, which is the tie rule.
  return static_cast<int>(
      std::max_element(values_.begin(), values_.end()) - values_.begin());
}

ProbVector softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  double zmax = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw std::invalid_argument("softmax: non-finite logit");
    zmax = std::max(zmax, z);
  }
  std::vector<double> out(logits.size());
  double denom = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out[c] = std::exp(logits[c] - zmax);
    denom += out[c];
  }
  for (double& v : out) v /= denom;
  return ProbVector(std::move(out));
}

std::vector<ProbVector> softmax_rows(const Matrix& logits) {
  std::vector<ProbVector> out;
  out.reserve(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) out.push_back(softmax(logits.row(i)));
  return out;
}

double cross_entropy(const ProbVector& target, const ProbVector& pred) {
  if (target.size() != pred.size())
    throw std::invalid_argument("cross_entropy: size mismatch");
  double h = 0.0;
  for (int c = 0; c < target.size(); ++c)
    h -= target[c] * std::log(std::max(pred[c], kLogClamp));
  return h;
}

double binary_cross_entropy(double target_pos, double target_neg,
                            double pred_pos, double pred_neg) {
  return -target_pos * std::log(std::max(pred_pos, kLogClamp)) -
         target_neg * std::log(std::max(pred_neg, kLogClamp));
}

std::vector<int> topk_indices(const ProbVector& p, int k) {
  if (k < 1 || k > p.size())
    throw std::invalid_argument("topk_indices: k out of range");
  std::vector<int> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  // stable_sort on descending value keeps lower indices first among ties.
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return p[a] > p[b]; });
  idx.resize(k);
  return idx;
}

double topk_mass(const ProbVector& p, int k) {
  double mass = 0.0;
  for (int c : topk_indices(p, k)) mass += p[c];
  return mass;
}

DaState::DaState(int num_classes, double momentum)
    : running_mean_(ProbVector::uniform(num_classes)),
      target_(ProbVector::uniform(num_classes)),
      momentum_(momentum) {}

DaState::DaState(ProbVector running_mean, ProbVector target, double momentum)
    : running_mean_(std::move(running_mean)),
      target_(std::move(target)),
      momentum_(momentum) {
  if (running_mean_.size() != target_.size())
    throw std::invalid_argument("DaState: size mismatch");
}

void DaState::update(const ProbVector& batch_mean) {
  if (batch_mean.size() != running_mean_.size())
    throw std::invalid_argument("DaState::update: size mismatch");
  std::vector<double> next(running_mean_.size());
  for (int c = 0; c < running_mean_.size(); ++c)
    next[c] = momentum_ * running_mean_[c] + (1.0 - momentum_) * batch_mean[c];
  running_mean_ = ProbVector(std::move(next));
}

ProbVector DaState::apply(const ProbVector& p) const {
  if (p.size() != running_mean_.size())
    throw std::invalid_argument("DaState::apply: size mismatch");
  std::vector<double> out(p.size());
  double sum = 0.0;
  for (int c = 0; c < p.size(); ++c) {
    out[c] = p[c] * target_[c] / std::max(running_mean_[c], kDaClamp);
    sum += out[c];
  }
  for (double& v : out) v /= sum;
  return ProbVector(std::move(out));
}

ProbVector mean_prob(std::span<const ProbVector> batch) {
  if (batch.empty()) throw std::invalid_argument("mean_prob: empty batch");
  std::vector<double> acc(batch.front().size(), 0.0);
  for (const ProbVector& p : batch) {
    if (p.size() != static_cast<int>(acc.size()))
      throw std::invalid_argument("mean_prob: size mismatch");
    for (int c = 0; c < p.size(); ++c) acc[c] += p[c];
  }
  for (double& v : acc) v /= static_cast<double>(batch.size());
  return ProbVector(std::move(acc));
}

}  // namespace allmatch
