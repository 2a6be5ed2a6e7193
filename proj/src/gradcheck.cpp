#include "allmatch/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "allmatch/bcc.hpp"
#include "allmatch/harness.hpp"
#include "allmatch/prob.hpp"

namespace allmatch {

namespace {

struct ParamRef {
  double* value;
  double* grad;
  std::string name;
};

std::vector<ParamRef> enumerate_params(Mlp& model, Gradients& grads) {
  std::vector<ParamRef> refs;
  for (std::size_t l = 0; l < model.hidden().size(); ++l) {
    DenseLayer& layer = model.hidden()[l];
    for (std::size_t i = 0; i < layer.weight.size(); ++i)
      refs.push_back({&layer.weight.data()[i],
                      &grads.hidden_weights[l].data()[i],
                      "hidden" + std::to_string(l) + ".w[" + std::to_string(i) +
                          "]"});
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
      refs.push_back({&layer.bias[i], &grads.hidden_biases[l][i],
                      "hidden" + std::to_string(l) + ".b[" + std::to_string(i) +
                          "]"});
  }
  for (std::size_t i = 0; i < model.classifier().size(); ++i)
    refs.push_back({&model.classifier().data()[i], &grads.classifier.data()[i],
                    "classifier[" + std::to_string(i) + "]"});
  return refs;
}

ProbVector random_simplex(int num_classes, std::mt19937_64& rng) {
  std::exponential_distribution<double> exp_dist(1.0);
  std::vector<double> v(num_classes);
  double sum = 0.0;
  for (double& x : v) {
    x = exp_dist(rng);
    sum += x;
  }
  for (double& x : v) x /= sum;
  return ProbVector(std::move(v));
}

Matrix random_inputs(int batch, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix x(batch, dim);
  for (double& v : x.data()) v = noise(rng);
  return x;
}

}  // namespace

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kSupervised:
      return "supervised";
    case LossKind::kUnsupervised:
      return "unsupervised";
    case LossKind::kBcc:
      return "bcc";
  }
  return "?";
}

GradCheckResult gradcheck_loss(LossKind kind, int input_dim,
                               const std::vector<int>& hidden_dims,
                               int num_classes, int batch, std::uint64_t seed,
                               double fd_step, double corrupt_analytic) {
  std::mt19937_64 rng(seed);
  Mlp model = Mlp::random(input_dim, hidden_dims, num_classes, rng);
  const Matrix inputs = random_inputs(batch, input_dim, rng);

  // Fixed weak-side targets.
  std::vector<int> labels(batch);
  std::vector<ProbVector> p_tilde;
  std::vector<double> weights(batch);
  std::vector<int> ks(batch);
  std::uniform_int_distribution<int> label_dist(0, num_classes - 1);
  std::uniform_int_distribution<int> k_dist(1, num_classes);
  std::uniform_real_distribution<double> weight_dist(0.0, 1.0);
  for (int i = 0; i < batch; ++i) {
    labels[i] = label_dist(rng);
    p_tilde.push_back(random_simplex(num_classes, rng));
    // A mix of hard-masked, soft, and unit weights.
    const double u = weight_dist(rng);
    weights[i] = u < 0.25 ? 0.0 : (u > 0.75 ? 1.0 : u);
    ks[i] = k_dist(rng);
  }

  auto loss_value = [&](const Mlp& m) -> double {
    const ForwardResult out = forward(m, inputs);
    const std::vector<ProbVector> probs = softmax_rows(out.logits);
    switch (kind) {
      case LossKind::kSupervised:
        return supervised_loss(probs, labels);
      case LossKind::kUnsupervised:
        return unsupervised_loss(p_tilde, probs, weights);
      case LossKind::kBcc: {
        std::vector<DivisionPair> divisions;
        divisions.reserve(batch);
        for (int i = 0; i < batch; ++i)
          divisions.push_back(binary_division(p_tilde[i], probs[i], ks[i]));
        return bcc_loss(divisions);
      }
    }
    throw std::logic_error("unreachable");
  };

  // Analytic gradient.
  ForwardCache cache;
  const ForwardResult out = forward(model, inputs, &cache);
  const std::vector<ProbVector> probs = softmax_rows(out.logits);
  Matrix dlogits(batch, num_classes);
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (int i = 0; i < batch; ++i) {
    switch (kind) {
      case LossKind::kSupervised:
        for (int c = 0; c < num_classes; ++c)
          dlogits(i, c) =
              (probs[i][c] - (c == labels[i] ? 1.0 : 0.0)) * inv_b;
        break;
      case LossKind::kUnsupervised: {
        if (weights[i] == 0.0) break;
        const int pseudo = p_tilde[i].argmax();
        for (int c = 0; c < num_classes; ++c)
          dlogits(i, c) = weights[i] *
                          (probs[i][c] - (c == pseudo ? 1.0 : 0.0)) * inv_b;
        break;
      }
      case LossKind::kBcc: {
        const DivisionPair pair = binary_division(p_tilde[i], probs[i], ks[i]);
        const std::vector<double> g = bcc_logit_grad(probs[i], pair);
        for (int c = 0; c < num_classes; ++c) dlogits(i, c) = g[c] * inv_b;
        break;
      }
    }
  }
  Gradients grads = backward(model, cache, dlogits);

  std::vector<ParamRef> refs = enumerate_params(model, grads);
  if (corrupt_analytic != 0.0 && !refs.empty())
    *refs[refs.size() / 2].grad += corrupt_analytic;

  GradCheckResult result;
  for (const ParamRef& ref : refs) {
    const double saved = *ref.value;
    *ref.value = saved + fd_step;
    const double up = loss_value(model);
    *ref.value = saved - fd_step;
    const double down = loss_value(model);
    *ref.value = saved;
    const double numeric = (up - down) / (2.0 * fd_step);
    const double analytic = *ref.grad;
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-5});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_coordinate = ref.name;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace allmatch
