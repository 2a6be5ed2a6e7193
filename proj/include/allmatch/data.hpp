#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "allmatch/matrix.hpp"
#include "allmatch/rng.hpp"

namespace allmatch {

struct LabeledExample {
  std::vector<double> features;
  int label = 0;
};

// hidden_truth is carried for metrics only; the loss interfaces never see it.
struct UnlabeledExample {
  std::vector<double> features;
  int hidden_truth = 0;
};

struct SslDataset {
  int num_classes = 0;
  int input_dim = 0;
  std::vector<LabeledExample> labeled;
  std::vector<UnlabeledExample> unlabeled;
  std::vector<LabeledExample> test;
  std::vector<std::string> warnings;
};

/// Weak view adds N(0, weak_sigma^2) noise; the strong view adds
/// N(0, strong_sigma^2) noise and then zeroes each coordinate independently
/// with feature_dropout_prob.
struct AugmentationSpec {
  double weak_noise_sigma = 0.1;
  double strong_noise_sigma = 0.5;
  double feature_dropout_prob = 0.1;

  void validate() const;
};

enum class AugmentView { kWeak, kStrong };

std::vector<double> augment(std::span<const double> x,
                            const AugmentationSpec& spec, AugmentView view,
                            std::mt19937_64& rng);
std::vector<double> augment_seeded(std::span<const double> x,
                                   const AugmentationSpec& spec,
                                   AugmentView view, std::uint64_t seed);

/// Gaussian clusters with unit variance. Class means sit on a circle of
/// radius `separation` through the first two coordinates (evenly spaced on a
/// line when dim == 1).
SslDataset make_gaussian_mixture(int num_classes, int per_class_labeled,
                                 int per_class_unlabeled, int dim,
                                 double separation, std::uint64_t seed,
                                 int test_per_class = 500);

struct LongTailSpec {
  int head_labeled = 0;    // N_1
  int head_unlabeled = 0;  // M_1
  double gamma = 1.0;      // imbalance ratio
  int num_classes = 0;

  void validate() const;
};

/// Exponentially decaying per-class count: round-half-up of
/// head * gamma^(-(c-1)/(C-1)) for 1-based class c, clamped below at 1.
int long_tail_count(int head, double gamma, int num_classes, int class_index,
                    bool* clamped = nullptr);

/// Long-tailed labeled/unlabeled splits over the same Gaussian mixture
/// geometry; the test split stays balanced.
SslDataset make_long_tailed(const LongTailSpec& spec, int dim,
                            double separation, std::uint64_t seed,
                            int test_per_class = 500);

struct LabeledBatch {
  Matrix inputs;  // weak-augmented
  std::vector<int> labels;
};

struct UnlabeledBatch {
  Matrix weak;
  Matrix strong;
  std::vector<int> hidden_truth;
  std::vector<std::size_t> indices;
  std::size_t size() const { return indices.size(); }
};

struct TrainingBatch {
  LabeledBatch labeled;
  UnlabeledBatch unlabeled;
};

/// Deterministic batch stream: batch t is a pure function of (seed, t), so a
/// resumed run replays exactly. Labeled examples are sampled with
/// replacement; unlabeled examples are shuffled per epoch without
/// replacement (an epoch boundary may fall inside a batch).
class BatchIterator {
 public:
  BatchIterator(const SslDataset& dataset, int batch_labeled,
                int batch_unlabeled, AugmentationSpec augmentation,
                std::uint64_t seed);

  /// Batch for 1-based iteration t.
  TrainingBatch at(std::int64_t iteration) const;

  int batch_labeled() const { return batch_labeled_; }
  int batch_unlabeled() const { return batch_unlabeled_; }

 private:
  const std::vector<std::size_t>& epoch_permutation(std::int64_t epoch) const;

  const SslDataset* dataset_;
  int batch_labeled_;
  int batch_unlabeled_;
  AugmentationSpec augmentation_;
  std::uint64_t seed_;

  mutable std::int64_t cached_epoch_[2] = {-1, -1};
  mutable std::vector<std::size_t> cached_perm_[2];
};

/// CSV schema: header "f0,...,f{d-1},label,split" with split in
/// {labeled, unlabeled, test}. Doubles are written with 17 significant
/// digits so write/read round-trips bit-exactly.
SslDataset load_csv(const std::string& path);
void save_csv(const SslDataset& dataset, const std::string& path);

}  // namespace allmatch
