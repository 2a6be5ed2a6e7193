#include <doctest.h>

#include <random>

#include "allmatch/cat.hpp"
#include "test_util.hpp"

using namespace allmatch;

TEST_CASE("global threshold starts at 1/C") {
  CatState cat(10, 0.999);
  CHECK(cat.tau_global() == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("global threshold EMA single step") {
  CatState cat(10, 0.999);
  // One batch whose mean confidence is 0.5.
  std::vector<ProbVector> batch = {
      ProbVector(std::vector<double>{0.5, 0.5 / 9, 0.5 / 9, 0.5 / 9, 0.5 / 9,
                                     0.5 / 9, 0.5 / 9, 0.5 / 9, 0.5 / 9,
                                     0.5 / 9})};
  cat.update_global(batch);
  CHECK(cat.tau_global() ==
        doctest::Approx(0.999 * 0.1 + 0.001 * 0.5).epsilon(1e-12));
}

TEST_CASE("global threshold matches a scalar recurrence over 1000 updates") {
  std::mt19937_64 rng(13);
  CatState cat(5, 0.99);
  double oracle = 1.0 / 5.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<ProbVector> batch = testutil::random_prob_batch(8, 5, rng);
    cat.update_global(batch);
    double mean_conf = 0.0;
    for (const ProbVector& p : batch) mean_conf += p.max();
    mean_conf /= 8.0;
    oracle = 0.99 * oracle + 0.01 * mean_conf;
    CHECK(std::abs(cat.tau_global() - oracle) < 1e-12);
  }
}

TEST_CASE("empty batches are rejected") {
  CatState cat(5, 0.999);
  CHECK_THROWS_AS(cat.update_global(std::vector<ProbVector>{}),
                  std::invalid_argument);
}

TEST_CASE("equal norms give every class the global threshold") {
  CatState cat(4, 0.999);
  cat.update_local(std::vector<double>{2.0, 2.0, 2.0, 2.0});
  for (double t : cat.class_thresholds())
    CHECK(t == doctest::Approx(cat.tau_global()));
}

TEST_CASE("local adjustment scales linearly in the norm ratio") {
  CatState cat(2, 1.0);  // momentum 1: tau frozen at 1/C = 0.5
  // Force tau to a known value through the restore path.
  cat.restore(0.8, {0.8, 0.8});
  cat.update_local(std::vector<double>{2.0, 1.0});
  CHECK(cat.class_thresholds()[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(cat.class_thresholds()[1] == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("local adjustment matches a scalar oracle on random norms") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unif(0.0, 3.0);
  CatState cat(6, 0.9);
  for (int trial = 0; trial < 200; ++trial) {
    cat.update_global(testutil::random_prob_batch(4, 6, rng));
    std::vector<double> norms(6);
    for (double& n : norms) n = unif(rng);
    cat.update_local(norms);
    double max_norm = 0.0;
    for (double n : norms) max_norm = std::max(max_norm, n);
    for (int c = 0; c < 6; ++c) {
      const double expected = cat.tau_global() * norms[c] / max_norm;
      CHECK(std::abs(cat.class_thresholds()[c] - expected) < 1e-12);
    }
  }
}

TEST_CASE("all-zero norms fall back to the global threshold") {
  CatState cat(3, 0.999);
  cat.update_local(std::vector<double>{0.0, 0.0, 0.0});
  for (double t : cat.class_thresholds())
    CHECK(t == doctest::Approx(cat.tau_global()));
}

TEST_CASE("mask passes a confident prediction") {
  CatState cat(2, 1.0);
  cat.restore(0.9, {0.9, 0.9});
  cat.update_local(std::vector<double>{1.0, 1.0});
  CHECK(cat.mask(ProbVector(std::vector<double>{0.99, 0.01})) == 1);
}

TEST_CASE("mask drops a uniform prediction under any higher threshold") {
  CatState cat(4, 1.0);
  cat.restore(0.5, {0.5, 0.5, 0.5, 0.5});
  cat.update_local(std::vector<double>{1.0, 1.0, 1.0, 1.0});
  CHECK(cat.mask(ProbVector::uniform(4)) == 0);
}

TEST_CASE("mask comparison is inclusive at the boundary") {
  CatState cat(2, 1.0);
  cat.restore(0.75, {0.75, 0.75});
  cat.update_local(std::vector<double>{1.0, 1.0});
  CHECK(cat.mask(ProbVector(std::vector<double>{0.75, 0.25})) == 1);
}

TEST_CASE("mask is monotone in class thresholds") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    CatState high(5, 1.0);
    CatState low(5, 1.0);
    high.restore(0.9, {0.9, 0.9, 0.9, 0.9, 0.9});
    low.restore(0.9, {0.9, 0.9, 0.9, 0.9, 0.9});
    std::uniform_real_distribution<double> unif(0.1, 1.0);
    std::vector<double> norms(5);
    for (double& n : norms) n = unif(rng);
    high.update_local(norms);
    std::vector<double> lowered = norms;
    for (double& n : lowered) n *= 0.5;  // same ratios: identical thresholds
    low.update_local(lowered);
    ProbVector p = testutil::random_simplex(5, rng);
    // Lowering any threshold never flips a pass into a drop: compare against
    // a state whose every threshold is scaled down.
    CatState lower_tau(5, 1.0);
    lower_tau.restore(0.45, {0.45, 0.45, 0.45, 0.45, 0.45});
    lower_tau.update_local(norms);
    if (high.mask(p) == 1) CHECK(lower_tau.mask(p) == 1);
  }
}

TEST_CASE("local adjustment is scale free") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unif(0.1, 2.0);
  CatState a(6, 0.9);
  CatState b(6, 0.9);
  std::vector<ProbVector> batch = testutil::random_prob_batch(8, 6, rng);
  a.update_global(batch);
  b.update_global(batch);
  std::vector<double> norms(6);
  for (double& n : norms) n = unif(rng);
  std::vector<double> scaled = norms;
  for (double& n : scaled) n *= 37.5;
  a.update_local(norms);
  b.update_local(scaled);
  for (int c = 0; c < 6; ++c)
    CHECK(a.class_thresholds()[c] ==
          doctest::Approx(b.class_thresholds()[c]).epsilon(1e-12));
}

TEST_CASE("class with the largest norm gets exactly the global threshold") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> unif(0.1, 2.0);
  CatState cat(5, 0.9);
  for (int trial = 0; trial < 100; ++trial) {
    cat.update_global(testutil::random_prob_batch(4, 5, rng));
    std::vector<double> norms(5);
    for (double& n : norms) n = unif(rng);
    cat.update_local(norms);
    const int top =
        static_cast<int>(std::max_element(norms.begin(), norms.end()) -
                         norms.begin());
    CHECK(cat.class_thresholds()[top] == cat.tau_global());
    for (double t : cat.class_thresholds()) {
      CHECK(t <= cat.tau_global());
      CHECK(t >= 0.0);
    }
  }
}

TEST_CASE("clamp keeps the global threshold in range at every step") {
  std::mt19937_64 rng(31);
  CatState cat(10, 0.9, std::make_pair(0.9, 1.0));
  CHECK(cat.tau_global() == doctest::Approx(0.9));  // 1/C clamped up
  for (int t = 0; t < 300; ++t) {
    cat.update_global(testutil::random_prob_batch(8, 10, rng));
    CHECK(cat.tau_global() >= 0.9);
    CHECK(cat.tau_global() <= 1.0);
  }
}

TEST_CASE("cat state is O(C): no per-sample storage") {
  CatState small(10, 0.999);
  // Feed wildly different batch sizes; the state footprint must not change.
  std::mt19937_64 rng(37);
  small.update_global(testutil::random_prob_batch(2, 10, rng));
  const std::size_t after_small = small.class_thresholds().capacity();
  small.update_global(testutil::random_prob_batch(4096, 10, rng));
  CHECK(small.class_thresholds().capacity() == after_small);
  CHECK(small.class_thresholds().size() == 10);
  CHECK(sizeof(CatState) < 200);
}
