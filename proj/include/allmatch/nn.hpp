#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "allmatch/matrix.hpp"

namespace allmatch {

enum class Activation { kRelu, kIdentity };

struct DenseLayer {
  Matrix weight;             // [out x in]
  std::vector<double> bias;  // [out]
  Activation activation = Activation::kRelu;
};

/// Encoder (dense hidden layers) plus a bias-free linear classifier.
/// The classifier row norms are what the adaptive threshold reads, so the
/// classifier deliberately has no bias term.
class Mlp {
 public:
  Mlp() = default;

  /// He-uniform hidden layers, classifier rows uniform in +-1/sqrt(d),
  /// biases zero. Draw order is fixed: layer by layer, weights row-major.
  static Mlp random(int input_dim, const std::vector<int>& hidden_dims,
                    int num_classes, std::mt19937_64& rng);

  /// All parameters zero; useful mostly in tests.
  static Mlp zeros(int input_dim, const std::vector<int>& hidden_dims,
                   int num_classes);

  int input_dim() const { return input_dim_; }
  int feature_dim() const { return feature_dim_; }
  int num_classes() const { return num_classes_; }

  std::vector<DenseLayer>& hidden() { return hidden_; }
  const std::vector<DenseLayer>& hidden() const { return hidden_; }
  Matrix& classifier() { return classifier_; }
  const Matrix& classifier() const { return classifier_; }

  bool same_shape(const Mlp& other) const;
  bool all_finite() const;

 private:
  int input_dim_ = 0;
  int feature_dim_ = 0;
  int num_classes_ = 0;
  std::vector<DenseLayer> hidden_;
  Matrix classifier_;  // [C x d], no bias
};

/// Intermediates kept by forward() so backward() can run. Only valid for the
/// exact (model shape, inputs) pair that produced it.
struct ForwardCache {
  Matrix inputs;
  std::vector<Matrix> pre;   // pre-activation per hidden layer
  std::vector<Matrix> post;  // post-activation per hidden layer
  bool valid = false;
};

struct ForwardResult {
  Matrix features;  // [n x d]
  Matrix logits;    // [n x C]
};

/// logits = features * W^T with features from the encoder. Pass a cache to
/// enable a later backward() on the same inputs.
ForwardResult forward(const Mlp& model, const Matrix& inputs,
                      ForwardCache* cache = nullptr);

/// Parameter-shaped gradient container.
struct Gradients {
  std::vector<Matrix> hidden_weights;
  std::vector<std::vector<double>> hidden_biases;
  Matrix classifier;

  static Gradients zeros_like(const Mlp& model);
  void add(const Gradients& other);
  bool all_finite() const;
};

/// Backpropagate d(loss)/d(logits) through the model. The cache must come
/// from the immediately preceding forward() on the same inputs.
Gradients backward(const Mlp& model, const ForwardCache& cache,
                   const Matrix& logit_grads);

/// SGD with momentum under the cosine schedule
/// lr(k) = base_lr * cos(7*pi*k / (16 * total_iterations)).
class SgdOptimizer {
 public:
  SgdOptimizer(const Mlp& model, double base_lr, double momentum,
               std::int64_t total_iterations);

  /// Learning rate at the current step counter.
  double learning_rate() const;
  static double learning_rate_at(double base_lr, std::int64_t step,
                                 std::int64_t total_iterations);

  /// v <- momentum*v + g; theta <- theta - lr(k)*v; k <- k+1.
  void step(Mlp& model, const Gradients& grads);

  std::int64_t iteration() const { return step_count_; }
  std::int64_t total_iterations() const { return total_iterations_; }
  double base_lr() const { return base_lr_; }
  double momentum() const { return momentum_; }

  Gradients& velocity() { return velocity_; }
  const Gradients& velocity() const { return velocity_; }
  void set_iteration(std::int64_t k) { step_count_ = k; }

 private:
  double base_lr_;
  double momentum_;
  std::int64_t total_iterations_;
  std::int64_t step_count_ = 0;
  Gradients velocity_;
};

/// Shadow copy of a model updated as shadow = decay*shadow + (1-decay)*source.
class EmaModel {
 public:
  EmaModel(const Mlp& source, double decay);

  void update(const Mlp& source);

  const Mlp& shadow() const { return shadow_; }
  Mlp& shadow() { return shadow_; }
  double decay() const { return decay_; }

  /// L2 norm of each classifier row of the shadow model.
  std::vector<double> classifier_weight_norms() const;

 private:
  Mlp shadow_;
  double decay_;
};

/// Row L2 norms of any classifier matrix.
std::vector<double> classifier_row_norms(const Matrix& classifier);

}  // namespace allmatch
