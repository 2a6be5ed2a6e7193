#include <doctest.h>

#include <cmath>
#include <random>

#include "allmatch/gradcheck.hpp"
#include "allmatch/nn.hpp"

using namespace allmatch;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = noise(rng);
  return m;
}

// Plain nested-loop re-implementation of the forward pass, kept independent
// of the production code path.
Matrix oracle_forward(const Mlp& model, const Matrix& x) {
  std::vector<std::vector<double>> act(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    act[i].assign(x.row(i).begin(), x.row(i).end());
  for (const DenseLayer& layer : model.hidden()) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      std::vector<double> next(layer.weight.rows());
      for (std::size_t o = 0; o < layer.weight.rows(); ++o) {
        double acc = layer.bias[o];
        for (std::size_t j = 0; j < layer.weight.cols(); ++j)
          acc += act[i][j] * layer.weight(o, j);
        next[o] = acc > 0.0 ? acc : 0.0;
      }
      act[i] = next;
    }
  }
  Matrix logits(x.rows(), model.num_classes());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (int c = 0; c < model.num_classes(); ++c) {
      double acc = 0.0;
      for (int j = 0; j < model.feature_dim(); ++j)
        acc += act[i][j] * model.classifier()(c, j);
      logits(i, c) = acc;
    }
  return logits;
}

}  // namespace

TEST_CASE("forward of a zero model is zero logits") {
  Mlp model = Mlp::zeros(3, {4}, 2);
  std::mt19937_64 rng(1);
  Matrix x = random_matrix(5, 3, rng);
  ForwardResult out = forward(model, x);
  for (double v : out.logits.data()) CHECK(v == 0.0);
}

TEST_CASE("identity encoder with identity classifier reproduces inputs") {
  Mlp model = Mlp::zeros(3, {}, 3);
  for (int c = 0; c < 3; ++c) model.classifier()(c, c) = 1.0;
  std::mt19937_64 rng(2);
  Matrix x = random_matrix(4, 3, rng);
  ForwardResult out = forward(model, x);
  CHECK(out.features.rows() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) {
      CHECK(out.logits(i, c) == doctest::Approx(x(i, c)).epsilon(1e-15));
      CHECK(out.features(i, c) == x(i, c));
    }
}

TEST_CASE("forward matches the nested-loop oracle") {
  std::mt19937_64 rng(42);
  Mlp model = Mlp::random(4, {6, 5}, 3, rng);
  Matrix x = random_matrix(7, 4, rng);
  ForwardResult out = forward(model, x);
  Matrix expected = oracle_forward(model, x);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(out.logits(i, c) - expected(i, c)) < 1e-10);
}

TEST_CASE("forward rejects dimension mismatch and empty batches") {
  Mlp model = Mlp::zeros(3, {4}, 2);
  CHECK_THROWS_AS(forward(model, Matrix(2, 5)), std::invalid_argument);
  CHECK_THROWS_AS(forward(model, Matrix(0, 3)), std::invalid_argument);
}

TEST_CASE("backward of zero logit grads is a zero gradient") {
  std::mt19937_64 rng(3);
  Mlp model = Mlp::random(3, {4}, 2, rng);
  Matrix x = random_matrix(5, 3, rng);
  ForwardCache cache;
  forward(model, x, &cache);
  Gradients g = backward(model, cache, Matrix(5, 2, 0.0));
  for (const Matrix& w : g.hidden_weights)
    for (double v : w.data()) CHECK(v == 0.0);
  for (double v : g.classifier.data()) CHECK(v == 0.0);
}

TEST_CASE("sum-of-logits gradient is replicated column sums") {
  // No hidden layers: d(sum logits)/dW[c][j] = sum_i x[i][j] for every c.
  std::mt19937_64 rng(4);
  Mlp model = Mlp::random(3, {}, 4, rng);
  Matrix x = random_matrix(6, 3, rng);
  ForwardCache cache;
  forward(model, x, &cache);
  Gradients g = backward(model, cache, Matrix(6, 4, 1.0));
  for (int c = 0; c < 4; ++c)
    for (int j = 0; j < 3; ++j) {
      double col_sum = 0.0;
      for (std::size_t i = 0; i < 6; ++i) col_sum += x(i, j);
      CHECK(g.classifier(c, j) == doctest::Approx(col_sum).epsilon(1e-12));
    }
}

TEST_CASE("backward requires a matching live cache") {
  std::mt19937_64 rng(5);
  Mlp model = Mlp::random(3, {4}, 2, rng);
  ForwardCache cache;  // never filled
  CHECK_THROWS_AS(backward(model, cache, Matrix(5, 2)), std::invalid_argument);

  Matrix x = random_matrix(5, 3, rng);
  forward(model, x, &cache);
  CHECK_THROWS_AS(backward(model, cache, Matrix(4, 2)), std::invalid_argument);
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 seeds(99);
  for (int draw = 0; draw < 5; ++draw) {
    GradCheckResult r = gradcheck_loss(LossKind::kSupervised, 3, {8, 6}, 4, 5,
                                       seeds());
    CAPTURE(r.worst_coordinate);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("gradcheck catches a corrupted gradient") {
  GradCheckResult r =
      gradcheck_loss(LossKind::kSupervised, 3, {8}, 4, 5, 7, 1e-5, 0.5);
  CHECK(r.max_rel_error > 1e-4);
}

TEST_CASE("sgd with zero gradients leaves parameters unchanged") {
  std::mt19937_64 rng(6);
  Mlp model = Mlp::random(3, {4}, 2, rng);
  Mlp before = model;
  SgdOptimizer opt(model, 0.1, 0.9, 100);
  opt.step(model, Gradients::zeros_like(model));
  CHECK(model.classifier().data() == before.classifier().data());
  CHECK(model.hidden()[0].weight.data() == before.hidden()[0].weight.data());
}

TEST_CASE("sgd with zero momentum is plain gradient descent") {
  std::mt19937_64 rng(7);
  Mlp model = Mlp::random(2, {}, 2, rng);
  Mlp before = model;
  SgdOptimizer opt(model, 0.5, 0.0, 10);
  Gradients g = Gradients::zeros_like(model);
  for (double& v : g.classifier.data()) v = 1.0;
  const double lr0 = opt.learning_rate();
  CHECK(lr0 == doctest::Approx(0.5));  // lr(0) = base_lr
  opt.step(model, g);
  for (std::size_t i = 0; i < model.classifier().size(); ++i)
    CHECK(model.classifier().data()[i] ==
          doctest::Approx(before.classifier().data()[i] - lr0).epsilon(1e-15));
}

TEST_CASE("two constant-gradient steps give velocity 1.9g") {
  std::mt19937_64 rng(8);
  Mlp model = Mlp::random(2, {}, 2, rng);
  SgdOptimizer opt(model, 0.01, 0.9, 10);
  Gradients g = Gradients::zeros_like(model);
  for (double& v : g.classifier.data()) v = 2.0;
  opt.step(model, g);
  opt.step(model, g);
  // v2 = 0.9*(0.9*0 + g) + g = 1.9g
  for (double v : opt.velocity().classifier.data())
    CHECK(v == doctest::Approx(1.9 * 2.0).epsilon(1e-15));
}

TEST_CASE("cosine schedule starts at base lr and decreases monotonically") {
  const double base = 0.03;
  const std::int64_t total = 1000;
  CHECK(SgdOptimizer::learning_rate_at(base, 0, total) == base);
  double prev = base + 1.0;
  for (std::int64_t k = 0; k <= total; k += 25) {
    const double lr = SgdOptimizer::learning_rate_at(base, k, total);
    CHECK(lr < prev);
    if (k < total) CHECK(lr > 0.0);
    prev = lr;
  }
}

TEST_CASE("optimizer refuses to run past its schedule") {
  std::mt19937_64 rng(9);
  Mlp model = Mlp::random(2, {}, 2, rng);
  SgdOptimizer opt(model, 0.1, 0.9, 1);
  opt.step(model, Gradients::zeros_like(model));
  CHECK_THROWS_AS(opt.step(model, Gradients::zeros_like(model)),
                  std::logic_error);
}

TEST_CASE("ema degenerate decays") {
  std::mt19937_64 rng(10);
  Mlp model = Mlp::random(2, {3}, 2, rng);

  EmaModel snap(model, 0.0);
  Mlp moved = model;
  moved.classifier()(0, 0) += 1.0;
  snap.update(moved);
  CHECK(snap.shadow().classifier()(0, 0) ==
        doctest::Approx(moved.classifier()(0, 0)));

  EmaModel frozen(model, 1.0);
  frozen.update(moved);
  CHECK(frozen.shadow().classifier()(0, 0) ==
        doctest::Approx(model.classifier()(0, 0)));
}

TEST_CASE("ema blends by decay") {
  Mlp model = Mlp::zeros(1, {}, 1);
  model.classifier()(0, 0) = 0.1;
  EmaModel ema(model, 0.999);
  model.classifier()(0, 0) = 0.5;
  ema.update(model);
  CHECK(ema.shadow().classifier()(0, 0) ==
        doctest::Approx(0.1004).epsilon(1e-12));
}

TEST_CASE("ema matches its closed form under a constant source") {
  Mlp source = Mlp::zeros(1, {}, 1);
  source.classifier()(0, 0) = 0.7;
  Mlp init = Mlp::zeros(1, {}, 1);
  init.classifier()(0, 0) = -0.2;
  EmaModel ema(init, 0.95);
  for (int t = 1; t <= 200; ++t) {
    ema.update(source);
    const double expected = 0.7 + std::pow(0.95, t) * (-0.2 - 0.7);
    CHECK(std::abs(ema.shadow().classifier()(0, 0) - expected) < 1e-12);
  }
}

TEST_CASE("classifier weight norms") {
  Mlp model = Mlp::zeros(2, {}, 2);
  SUBCASE("zero classifier gives zero norms") {
    EmaModel ema(model, 0.5);
    for (double n : ema.classifier_weight_norms()) CHECK(n == 0.0);
  }
  SUBCASE("pythagorean row") {
    model.classifier()(0, 0) = 3.0;
    model.classifier()(0, 1) = 4.0;
    EmaModel ema(model, 0.5);
    CHECK(ema.classifier_weight_norms()[0] == doctest::Approx(5.0));
  }
  SUBCASE("random classifier matches a scalar-loop oracle") {
    std::mt19937_64 rng(11);
    Mlp m = Mlp::random(6, {}, 4, rng);
    EmaModel ema(m, 0.5);
    std::vector<double> norms = ema.classifier_weight_norms();
    for (int c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (int j = 0; j < 6; ++j) acc += m.classifier()(c, j) * m.classifier()(c, j);
      CHECK(norms[c] == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));
    }
  }
}

TEST_CASE("model initialization is deterministic under a seed") {
  std::mt19937_64 rng_a(123), rng_b(123);
  Mlp a = Mlp::random(5, {16, 8}, 3, rng_a);
  Mlp b = Mlp::random(5, {16, 8}, 3, rng_b);
  CHECK(a.classifier().data() == b.classifier().data());
  for (std::size_t l = 0; l < a.hidden().size(); ++l)
    CHECK(a.hidden()[l].weight.data() == b.hidden()[l].weight.data());
}

TEST_CASE("training arithmetic is bit-deterministic") {
  auto run = [] {
    std::mt19937_64 rng(77);
    Mlp model = Mlp::random(3, {8}, 3, rng);
    SgdOptimizer opt(model, 0.05, 0.9, 50);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
      Matrix x(4, 3);
      for (double& v : x.data()) v = noise(rng);
      ForwardCache cache;
      ForwardResult out = forward(model, x, &cache);
      Matrix dlogits(4, 3);
      for (std::size_t i = 0; i < dlogits.size(); ++i)
        dlogits.data()[i] = out.logits.data()[i] * 0.01;
      opt.step(model, backward(model, cache, dlogits));
    }
    return model;
  };
  Mlp a = run();
  Mlp b = run();
  CHECK(a.classifier().data() == b.classifier().data());
  for (std::size_t l = 0; l < a.hidden().size(); ++l) {
    CHECK(a.hidden()[l].weight.data() == b.hidden()[l].weight.data());
    CHECK(a.hidden()[l].bias == b.hidden()[l].bias);
  }
}
