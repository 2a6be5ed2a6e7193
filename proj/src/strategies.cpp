#include "allmatch/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace allmatch {

FixMatchStrategy::FixMatchStrategy(double tau) : tau_(tau) {
  if (!(tau > 0.0 && tau < 1.0))
    throw std::invalid_argument("FixMatchStrategy: tau outside (0,1)");
}

double FixMatchStrategy::weight(const ProbVector& p_tilde) const {
  return p_tilde.max() >= tau_ ? 1.0 : 0.0;
}

FlexMatchStrategy::FlexMatchStrategy(int num_classes, double base_tau,
                                     double momentum)
    : num_classes_(num_classes),
      base_tau_(base_tau),
      momentum_(momentum),
      counts_(num_classes, 0.0) {
  if (num_classes < 1)
    throw std::invalid_argument("FlexMatchStrategy: num_classes < 1");
  if (!(base_tau > 0.0 && base_tau < 1.0))
    throw std::invalid_argument("FlexMatchStrategy: tau outside (0,1)");
}

void FlexMatchStrategy::update(const StrategyInputs& inputs) {
  if (inputs.aligned_weak.empty()) return;
  std::vector<double> batch_counts(num_classes_, 0.0);
  for (const ProbVector& p : inputs.aligned_weak)
    if (p.max() >= base_tau_) batch_counts[p.argmax()] += 1.0;
  for (int c = 0; c < num_classes_; ++c)
    counts_[c] = momentum_ * counts_[c] + (1.0 - momentum_) * batch_counts[c];
}

std::vector<double> FlexMatchStrategy::class_thresholds() const {
  double max_count = *std::max_element(counts_.begin(), counts_.end());
  if (max_count <= 0.0)
    return std::vector<double>(num_classes_, base_tau_);
  std::vector<double> thresholds(num_classes_);
  for (int c = 0; c < num_classes_; ++c)
    thresholds[c] = base_tau_ * counts_[c] / max_count;
  return thresholds;
}

double FlexMatchStrategy::weight(const ProbVector& p_tilde) const {
  return p_tilde.max() >= class_thresholds()[p_tilde.argmax()] ? 1.0 : 0.0;
}

double FlexMatchStrategy::threshold_indicator() const {
  std::vector<double> thresholds = class_thresholds();
  double sum = 0.0;
  for (double t : thresholds) sum += t;
  return sum / static_cast<double>(num_classes_);
}

nlohmann::json FlexMatchStrategy::state_json() const {
  return {{"counts", counts_}};
}

void FlexMatchStrategy::restore_state(const nlohmann::json& j) {
  counts_ = j.at("counts").get<std::vector<double>>();
  if (static_cast<int>(counts_.size()) != num_classes_)
    throw std::invalid_argument("FlexMatchStrategy: bad restored counts");
}

FreeMatchStrategy::FreeMatchStrategy(
    int num_classes, double momentum,
    std::optional<std::pair<double, double>> clamp_range)
    : ema_(num_classes, momentum, clamp_range) {}

void FreeMatchStrategy::update(const StrategyInputs& inputs) {
  if (inputs.raw_weak.empty()) return;
  ema_.update(inputs.raw_weak);
}

double FreeMatchStrategy::weight(const ProbVector& p_tilde) const {
  return p_tilde.max() >= ema_.value() ? 1.0 : 0.0;
}

nlohmann::json FreeMatchStrategy::state_json() const {
  return {{"tau", ema_.value()}};
}

void FreeMatchStrategy::restore_state(const nlohmann::json& j) {
  ema_.restore(j.at("tau").get<double>());
}

SoftMatchStrategy::SoftMatchStrategy(int num_classes, double momentum,
                                     double n_divisor)
    : mu_(1.0 / static_cast<double>(num_classes)),
      sigma_(1.0),
      n_divisor_(n_divisor),
      momentum_(momentum) {
  if (num_classes < 1)
    throw std::invalid_argument("SoftMatchStrategy: num_classes < 1");
  if (n_divisor <= 0.0)
    throw std::invalid_argument("SoftMatchStrategy: n_divisor <= 0");
}

void SoftMatchStrategy::update(const StrategyInputs& inputs) {
  if (inputs.raw_weak.empty()) return;
  double mean = 0.0;
  for (const ProbVector& p : inputs.raw_weak) mean += p.max();
  mean /= static_cast<double>(inputs.raw_weak.size());
  double var = 0.0;
  for (const ProbVector& p : inputs.raw_weak) {
    double d = p.max() - mean;
    var += d * d;
  }
  var /= static_cast<double>(inputs.raw_weak.size());
  mu_ = momentum_ * mu_ + (1.0 - momentum_) * mean;
  sigma_ = momentum_ * sigma_ + (1.0 - momentum_) * std::sqrt(var);
}

double SoftMatchStrategy::weight_for_confidence(double confidence) const {
  if (sigma_ <= 0.0) return confidence >= mu_ ? 1.0 : 0.0;
  const double shortfall = std::min(confidence - mu_, 0.0);
  const double scaled = sigma_ / n_divisor_;
  return std::exp(-(shortfall * shortfall) / (2.0 * scaled * scaled));
}

double SoftMatchStrategy::weight(const ProbVector& p_tilde) const {
  return weight_for_confidence(p_tilde.max());
}

bool SoftMatchStrategy::selected(const ProbVector& p_tilde) const {
  return p_tilde.max() >= mu_ - sigma_;
}

nlohmann::json SoftMatchStrategy::state_json() const {
  return {{"mu", mu_}, {"sigma", sigma_}};
}

void SoftMatchStrategy::restore_state(const nlohmann::json& j) {
  mu_ = j.at("mu").get<double>();
  sigma_ = j.at("sigma").get<double>();
}

AllMatchStrategy::AllMatchStrategy(
    int num_classes, double momentum,
    std::optional<std::pair<double, double>> clamp_range)
    : cat_(num_classes, momentum, clamp_range) {}

void AllMatchStrategy::update(const StrategyInputs& inputs) {
  if (inputs.raw_weak.empty()) return;
  cat_.update_global(inputs.raw_weak);
  cat_.update_local(inputs.classifier_norms);
}

double AllMatchStrategy::weight(const ProbVector& p_tilde) const {
  return static_cast<double>(cat_.mask(p_tilde));
}

nlohmann::json AllMatchStrategy::state_json() const {
  return {{"tau_global", cat_.tau_global()},
          {"class_thresholds", cat_.class_thresholds()}};
}

void AllMatchStrategy::restore_state(const nlohmann::json& j) {
  cat_.restore(j.at("tau_global").get<double>(),
               j.at("class_thresholds").get<std::vector<double>>());
}

std::unique_ptr<ConfidenceStrategy> make_strategy(const StrategyConfig& cfg) {
  if (cfg.token == "fixmatch")
    return std::make_unique<FixMatchStrategy>(cfg.fixmatch_tau);
  if (cfg.token == "flexmatch")
    return std::make_unique<FlexMatchStrategy>(cfg.num_classes,
                                               cfg.fixmatch_tau, cfg.momentum);
  if (cfg.token == "freematch")
    return std::make_unique<FreeMatchStrategy>(cfg.num_classes, cfg.momentum,
                                               cfg.clamp_range);
  if (cfg.token == "softmatch")
    return std::make_unique<SoftMatchStrategy>(cfg.num_classes, cfg.momentum,
                                               cfg.softmatch_n);
  if (cfg.token == "allmatch")
    return std::make_unique<AllMatchStrategy>(cfg.num_classes, cfg.momentum,
                                              cfg.clamp_range);
  throw std::invalid_argument("unknown strategy token: " + cfg.token);
}

}  // namespace allmatch
