#include <doctest.h>

#include <cmath>
#include <random>

#include "allmatch/strategies.hpp"
#include "test_util.hpp"

using namespace allmatch;

namespace {

ProbVector with_max(double conf, int cls, int num_classes) {
  std::vector<double> v(num_classes, (1.0 - conf) / (num_classes - 1));
  v[cls] = conf;
  return ProbVector(std::move(v));
}

}  // namespace

TEST_CASE("fixmatch threshold behavior") {
  FixMatchStrategy fm(0.95);
  CHECK(fm.weight(with_max(0.96, 0, 5)) == 1.0);
  CHECK(fm.weight(ProbVector::uniform(5)) == 0.0);
  CHECK(fm.weight(with_max(0.95, 2, 5)) == 1.0);  // inclusive boundary
  CHECK(fm.threshold_indicator() == 0.95);
}

TEST_CASE("flexmatch with equal counts reduces to the base threshold") {
  FlexMatchStrategy flex(3, 0.95, 0.999);
  flex.restore_state({{"counts", {10.0, 10.0, 10.0}}});
  for (double t : flex.class_thresholds()) CHECK(t == doctest::Approx(0.95));
}

TEST_CASE("flexmatch thresholds scale by count ratio") {
  FlexMatchStrategy flex(2, 0.95, 0.999);
  flex.restore_state({{"counts", {100.0, 50.0}}});
  std::vector<double> t = flex.class_thresholds();
  CHECK(t[0] == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(t[1] == doctest::Approx(0.475).epsilon(1e-12));
}

TEST_CASE("flexmatch thresholds match a scalar oracle on random counts") {
  std::mt19937_64 rng(83);
  std::uniform_real_distribution<double> unif(0.0, 40.0);
  FlexMatchStrategy flex(6, 0.9, 0.999);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> counts(6);
    for (double& c : counts) c = unif(rng);
    flex.restore_state({{"counts", counts}});
    const double max_count = *std::max_element(counts.begin(), counts.end());
    std::vector<double> t = flex.class_thresholds();
    for (int c = 0; c < 6; ++c)
      CHECK(t[c] == doctest::Approx(0.9 * counts[c] / max_count).epsilon(1e-12));
  }
}

TEST_CASE("flexmatch with no confident counts uses the base threshold") {
  FlexMatchStrategy flex(4, 0.95, 0.999);
  for (double t : flex.class_thresholds()) CHECK(t == doctest::Approx(0.95));
}

TEST_CASE("flexmatch accumulates confident pseudo-labels per class") {
  FlexMatchStrategy flex(3, 0.9, 0.5);
  std::vector<ProbVector> aligned = {with_max(0.95, 0, 3), with_max(0.97, 0, 3),
                                     with_max(0.92, 1, 3),
                                     ProbVector::uniform(3)};
  flex.update({{}, aligned, {}});
  // counts = 0.5*0 + 0.5*(2, 1, 0)
  CHECK(flex.counts()[0] == doctest::Approx(1.0));
  CHECK(flex.counts()[1] == doctest::Approx(0.5));
  CHECK(flex.counts()[2] == doctest::Approx(0.0));
}

TEST_CASE("freematch starts at 1/C") {
  FreeMatchStrategy free(10, 0.999, std::nullopt);
  CHECK(free.tau() == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("freematch equals CAT when the weight norms are uniform") {
  std::mt19937_64 rng(89);
  const int c = 6;
  FreeMatchStrategy free(c, 0.99, std::nullopt);
  AllMatchStrategy all(c, 0.99, std::nullopt);
  const std::vector<double> uniform_norms(c, 1.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<ProbVector> raw = testutil::random_prob_batch(8, c, rng);
    StrategyInputs inputs{raw, raw, uniform_norms};
    free.update(inputs);
    all.update(inputs);
    CHECK(free.tau() == all.cat().tau_global());  // bitwise
    for (const ProbVector& p : raw) CHECK(free.weight(p) == all.weight(p));
  }
}

TEST_CASE("freematch selection is a subset of CAT selection") {
  std::mt19937_64 rng(97);
  std::uniform_real_distribution<double> unif(0.1, 2.0);
  const int c = 5;
  FreeMatchStrategy free(c, 0.95, std::nullopt);
  AllMatchStrategy all(c, 0.95, std::nullopt);
  for (int t = 0; t < 300; ++t) {
    std::vector<ProbVector> raw = testutil::random_prob_batch(8, c, rng);
    std::vector<double> norms(c);
    for (double& n : norms) n = unif(rng);
    free.update({raw, raw, norms});
    all.update({raw, raw, norms});
    for (const ProbVector& p : raw)
      if (free.weight(p) == 1.0) CHECK(all.weight(p) == 1.0);
  }
}

TEST_CASE("freematch with a pinning clamp reproduces fixmatch") {
  std::mt19937_64 rng(101);
  FreeMatchStrategy frozen(5, 0.999, std::make_pair(0.95, 0.95));
  FixMatchStrategy fixed(0.95);
  for (int t = 0; t < 500; ++t) {
    std::vector<ProbVector> raw = testutil::random_prob_batch(8, 5, rng);
    frozen.update({raw, raw, {}});
    CHECK(frozen.tau() == 0.95);  // bitwise frozen
    for (const ProbVector& p : raw) CHECK(frozen.weight(p) == fixed.weight(p));
  }
}

TEST_CASE("softmatch weight is one at or above the running mean") {
  SoftMatchStrategy soft(10, 0.999, 2.0);
  soft.restore_state({{"mu", 0.6}, {"sigma", 0.1}});
  CHECK(soft.weight_for_confidence(0.6) == doctest::Approx(1.0));
  CHECK(soft.weight_for_confidence(0.9) == doctest::Approx(1.0));
}

TEST_CASE("softmatch hits e^-2 exactly one sigma below the mean") {
  SoftMatchStrategy soft(10, 0.999, 2.0);
  soft.restore_state({{"mu", 0.7}, {"sigma", 0.2}});
  CHECK(soft.weight_for_confidence(0.5) ==
        doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK(soft.selected(with_max(0.5, 0, 10)));   // boundary inclusive
  CHECK(!soft.selected(with_max(0.49, 0, 10)));
}

TEST_CASE("softmatch at half a sigma below gives exp(-0.5)") {
  SoftMatchStrategy soft(10, 0.999, 2.0);
  soft.restore_state({{"mu", 0.7}, {"sigma", 0.2}});
  CHECK(soft.weight_for_confidence(0.6) ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("softmatch weight is monotone below the mean, constant above") {
  SoftMatchStrategy soft(10, 0.999, 2.0);
  soft.restore_state({{"mu", 0.5}, {"sigma", 0.15}});
  double prev = 1.0;
  for (double c = 0.5; c >= 0.0; c -= 0.01) {
    const double w = soft.weight_for_confidence(c);
    CHECK(w <= prev + 1e-15);
    CHECK(w > 0.0);
    prev = w;
  }
  CHECK(soft.weight_for_confidence(0.7) == 1.0);
}

TEST_CASE("softmatch degenerate sigma falls back to a hard threshold") {
  SoftMatchStrategy soft(4, 0.999, 2.0);
  soft.restore_state({{"mu", 0.5}, {"sigma", 0.0}});
  CHECK(soft.weight_for_confidence(0.6) == 1.0);
  CHECK(soft.weight_for_confidence(0.4) == 0.0);
}

TEST_CASE("softmatch tracks batch mean and std by EMA") {
  SoftMatchStrategy soft(2, 0.5, 2.0);
  std::vector<ProbVector> raw = {with_max(0.9, 0, 2), with_max(0.7, 1, 2)};
  soft.update({raw, raw, {}});
  // batch mean = 0.8, population std = 0.1
  CHECK(soft.mu() == doctest::Approx(0.5 * 0.5 + 0.5 * 0.8).epsilon(1e-12));
  CHECK(soft.sigma() == doctest::Approx(0.5 * 1.0 + 0.5 * 0.1).epsilon(1e-12));
}

TEST_CASE("strategy factory covers every token and rejects unknowns") {
  StrategyConfig cfg;
  cfg.num_classes = 5;
  for (const char* token :
       {"fixmatch", "flexmatch", "freematch", "softmatch", "allmatch"}) {
    cfg.token = token;
    CHECK(make_strategy(cfg)->name() == token);
  }
  cfg.token = "nope";
  CHECK_THROWS_AS(make_strategy(cfg), std::invalid_argument);
}

TEST_CASE("threshold strategies emit only zero-or-one weights") {
  std::mt19937_64 rng(103);
  StrategyConfig cfg;
  cfg.num_classes = 6;
  for (const char* token : {"fixmatch", "flexmatch", "freematch", "allmatch"}) {
    cfg.token = token;
    auto strategy = make_strategy(cfg);
    std::vector<double> norms(6, 1.0);
    for (int t = 0; t < 50; ++t) {
      std::vector<ProbVector> raw = testutil::random_prob_batch(4, 6, rng);
      strategy->update({raw, raw, norms});
      for (const ProbVector& p : raw) {
        const double w = strategy->weight(p);
        CHECK((w == 0.0 || w == 1.0));
      }
    }
  }
}
