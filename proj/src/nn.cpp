#include "allmatch/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace allmatch {

namespace {

void fill_uniform(Matrix& m, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : m.data()) v = dist(rng);
}

// y = x * W^T + b, [n x in] * [out x in]^T -> [n x out]
Matrix affine(const Matrix& x, const Matrix& w, const std::vector<double>* b) {
  Matrix y(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double acc = b ? (*b)[o] : 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) acc += x(i, j) * w(o, j);
      y(i, o) = acc;
    }
  }
  return y;
}

Matrix apply_activation(const Matrix& pre, Activation act) {
  if (act == Activation::kIdentity) return pre;
  Matrix out = pre;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

}  // namespace

Mlp Mlp::random(int input_dim, const std::vector<int>& hidden_dims,
                int num_classes, std::mt19937_64& rng) {
  Mlp m = zeros(input_dim, hidden_dims, num_classes);
  for (DenseLayer& layer : m.hidden_) {
    double limit = std::sqrt(6.0 / static_cast<double>(layer.weight.cols()));
    fill_uniform(layer.weight, -limit, limit, rng);
  }
  double climit = 1.0 / std::sqrt(static_cast<double>(m.feature_dim_));
  fill_uniform(m.classifier_, -climit, climit, rng);
  return m;
}

Mlp Mlp::zeros(int input_dim, const std::vector<int>& hidden_dims,
               int num_classes) {
  if (input_dim < 1 || num_classes < 1)
    throw std::invalid_argument("Mlp: dimensions must be positive");
  for (int h : hidden_dims)
    if (h < 1) throw std::invalid_argument("Mlp: hidden width must be positive");
  Mlp m;
  m.input_dim_ = input_dim;
  m.num_classes_ = num_classes;
  int in = input_dim;
  for (int h : hidden_dims) {
    DenseLayer layer;
    layer.weight = Matrix(h, in);
    layer.bias.assign(h, 0.0);
    layer.activation = Activation::kRelu;
    m.hidden_.push_back(std::move(layer));
    in = h;
  }
  m.feature_dim_ = in;
  m.classifier_ = Matrix(num_classes, in);
  return m;
}

bool Mlp::same_shape(const Mlp& other) const {
  if (input_dim_ != other.input_dim_ || feature_dim_ != other.feature_dim_ ||
      num_classes_ != other.num_classes_ ||
      hidden_.size() != other.hidden_.size())
    return false;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    if (!hidden_[i].weight.same_shape(other.hidden_[i].weight) ||
        hidden_[i].bias.size() != other.hidden_[i].bias.size())
      return false;
  }
  return classifier_.same_shape(other.classifier_);
}

bool Mlp::all_finite() const {
  for (const DenseLayer& layer : hidden_) {
    for (double v : layer.weight.data())
      if (!std::isfinite(v)) return false;
    for (double v : layer.bias)
      if (!std::isfinite(v)) return false;
  }
  for (double v : classifier_.data())
    if (!std::isfinite(v)) return false;
  return true;
}

ForwardResult forward(const Mlp& model, const Matrix& inputs,
                      ForwardCache* cache) {
  if (inputs.rows() < 1)
    throw std::invalid_argument("forward: empty batch");
  if (static_cast<int>(inputs.cols()) != model.input_dim())
    throw std::invalid_argument("forward: input dimension mismatch");

  if (cache) {
    *cache = ForwardCache{};
    cache->inputs = inputs;
  }

  Matrix current = inputs;
  for (const DenseLayer& layer : model.hidden()) {
    Matrix pre = affine(current, layer.weight, &layer.bias);
    Matrix post = apply_activation(pre, layer.activation);
    if (cache) {
      cache->pre.push_back(pre);
      cache->post.push_back(post);
    }
    current = std::move(post);
  }

  ForwardResult result;
  result.logits = affine(current, model.classifier(), nullptr);
  result.features = std::move(current);
  if (cache) cache->valid = true;
  return result;
}

Gradients Gradients::zeros_like(const Mlp& model) {
  Gradients g;
  for (const DenseLayer& layer : model.hidden()) {
    g.hidden_weights.emplace_back(layer.weight.rows(), layer.weight.cols());
    g.hidden_biases.emplace_back(layer.bias.size(), 0.0);
  }
  g.classifier = Matrix(model.classifier().rows(), model.classifier().cols());
  return g;
}

void Gradients::add(const Gradients& other) {
  if (hidden_weights.size() != other.hidden_weights.size() ||
      !classifier.same_shape(other.classifier))
    throw std::invalid_argument("Gradients::add: shape mismatch");
  for (std::size_t l = 0; l < hidden_weights.size(); ++l) {
    if (!hidden_weights[l].same_shape(other.hidden_weights[l]))
      throw std::invalid_argument("Gradients::add: shape mismatch");
    for (std::size_t i = 0; i < hidden_weights[l].size(); ++i)
      hidden_weights[l].data()[i] += other.hidden_weights[l].data()[i];
    for (std::size_t i = 0; i < hidden_biases[l].size(); ++i)
      hidden_biases[l][i] += other.hidden_biases[l][i];
  }
  for (std::size_t i = 0; i < classifier.size(); ++i)
    classifier.data()[i] += other.classifier.data()[i];
}

bool Gradients::all_finite() const {
  for (const Matrix& w : hidden_weights)
    for (double v : w.data())
      if (!std::isfinite(v)) return false;
  for (const auto& b : hidden_biases)
    for (double v : b)
      if (!std::isfinite(v)) return false;
  for (double v : classifier.data())
    if (!std::isfinite(v)) return false;
  return true;
}

Gradients backward(const Mlp& model, const ForwardCache& cache,
                   const Matrix& logit_grads) {
  if (!cache.valid)
    throw std::invalid_argument("backward: cache missing or stale");
  if (cache.pre.size() != model.hidden().size())
    throw std::invalid_argument("backward: cache does not match model");
  if (logit_grads.rows() != cache.inputs.rows() ||
      static_cast<int>(logit_grads.cols()) != model.num_classes())
    throw std::invalid_argument("backward: logit gradient shape mismatch");

  const std::size_t n = cache.inputs.rows();
  const Matrix& features =
      cache.post.empty() ? cache.inputs : cache.post.back();

  Gradients grads = Gradients::zeros_like(model);

  // Classifier: dW = dZ^T * features.
  const Matrix& w = model.classifier();
  for (std::size_t c = 0; c < w.rows(); ++c)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        acc += logit_grads(i, c) * features(i, j);
      grads.classifier(c, j) = acc;
    }

  // d(features) = dZ * W.
  Matrix delta(n, w.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < w.rows(); ++c)
        acc += logit_grads(i, c) * w(c, j);
      delta(i, j) = acc;
    }

  for (int l = static_cast<int>(model.hidden().size()) - 1; l >= 0; --l) {
    const DenseLayer& layer = model.hidden()[l];
    const Matrix& pre = cache.pre[l];
    const Matrix& layer_input = l == 0 ? cache.inputs : cache.post[l - 1];

    if (layer.activation == Activation::kRelu) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < pre.cols(); ++o)
          if (pre(i, o) <= 0.0) delta(i, o) = 0.0;
    }

    Matrix& dw = grads.hidden_weights[l];
    for (std::size_t o = 0; o < layer.weight.rows(); ++o)
      for (std::size_t j = 0; j < layer.weight.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += delta(i, o) * layer_input(i, j);
        dw(o, j) = acc;
      }
    for (std::size_t o = 0; o < layer.bias.size(); ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += delta(i, o);
      grads.hidden_biases[l][o] = acc;
    }

    if (l > 0) {
      Matrix next(n, layer.weight.cols());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < layer.weight.cols(); ++j) {
          double acc = 0.0;
          for (std::size_t o = 0; o < layer.weight.rows(); ++o)
            acc += delta(i, o) * layer.weight(o, j);
          next(i, j) = acc;
        }
      delta = std::move(next);
    }
  }
  return grads;
}

SgdOptimizer::SgdOptimizer(const Mlp& model, double base_lr, double momentum,
                           std::int64_t total_iterations)
    : base_lr_(base_lr),
      momentum_(momentum),
      total_iterations_(total_iterations),
      velocity_(Gradients::zeros_like(model)) {
  if (total_iterations < 1)
    throw std::invalid_argument("SgdOptimizer: total_iterations < 1");
}

double SgdOptimizer::learning_rate_at(double base_lr, std::int64_t step,
                                      std::int64_t total_iterations) {
  constexpr double kPi = 3.14159265358979323846;
  return base_lr * std::cos(7.0 * kPi * static_cast<double>(step) /
                            (16.0 * static_cast<double>(total_iterations)));
}

double SgdOptimizer::learning_rate() const {
  return learning_rate_at(base_lr_, step_count_, total_iterations_);
}

void SgdOptimizer::step(Mlp& model, const Gradients& grads) {
  if (step_count_ >= total_iterations_)
    throw std::logic_error("SgdOptimizer::step: past total_iterations");
  const double lr = learning_rate();

  auto update = [&](double& param, double& vel, double grad) {
    vel = momentum_ * vel + grad;
    param -= lr * vel;
  };

  for (std::size_t l = 0; l < model.hidden().size(); ++l) {
    DenseLayer& layer = model.hidden()[l];
    for (std::size_t i = 0; i < layer.weight.size(); ++i)
      update(layer.weight.data()[i], velocity_.hidden_weights[l].data()[i],
             grads.hidden_weights[l].data()[i]);
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
      update(layer.bias[i], velocity_.hidden_biases[l][i],
             grads.hidden_biases[l][i]);
  }
  for (std::size_t i = 0; i < model.classifier().size(); ++i)
    update(model.classifier().data()[i], velocity_.classifier.data()[i],
           grads.classifier.data()[i]);

  ++step_count_;
  if (!model.all_finite())
    throw std::runtime_error("SgdOptimizer::step: non-finite parameter");
}

EmaModel::EmaModel(const Mlp& source, double decay)
    : shadow_(source), decay_(decay) {
  if (!(decay >= 0.0 && decay <= 1.0))
    throw std::invalid_argument("EmaModel: decay outside [0,1]");
}

void EmaModel::update(const Mlp& source) {
  if (!shadow_.same_shape(source))
    throw std::invalid_argument("EmaModel::update: shape mismatch");
  auto blend = [&](double& shadow, double src) {
    shadow = decay_ * shadow + (1.0 - decay_) * src;
  };
  for (std::size_t l = 0; l < shadow_.hidden().size(); ++l) {
    DenseLayer& sl = shadow_.hidden()[l];
    const DenseLayer& src = source.hidden()[l];
    for (std::size_t i = 0; i < sl.weight.size(); ++i)
      blend(sl.weight.data()[i], src.weight.data()[i]);
    for (std::size_t i = 0; i < sl.bias.size(); ++i)
      blend(sl.bias[i], src.bias[i]);
  }
  for (std::size_t i = 0; i < shadow_.classifier().size(); ++i)
    blend(shadow_.classifier().data()[i], source.classifier().data()[i]);
}

std::vector<double> classifier_row_norms(const Matrix& classifier) {
  std::vector<double> norms(classifier.rows());
  for (std::size_t c = 0; c < classifier.rows(); ++c) {
    double acc = 0.0;
    for (std::size_t j = 0; j < classifier.cols(); ++j)
      acc += classifier(c, j) * classifier(c, j);
    norms[c] = std::sqrt(acc);
  }
  return norms;
}

std::vector<double> EmaModel::classifier_weight_norms() const {
  return classifier_row_norms(shadow_.classifier());
}

}  // namespace allmatch
