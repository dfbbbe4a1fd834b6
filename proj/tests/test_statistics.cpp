#include <gtest/gtest.h>

#include <random>

#include "qgloc/randomness.hpp"
#include "qgloc/statistics.hpp"

using namespace qgloc;

TEST(Statistics, ExactLine) {
  const auto fit = fit_line({0, 1, 2, 3}, {1, 3, 5, 7});
  EXPECT_NEAR(fit.slope, 2.0, 1e-14);
  EXPECT_NEAR(fit.intercept, 1.0, 1e-14);
  EXPECT_NEAR(fit.r2, 1.0, 1e-14);
  EXPECT_NEAR(fit.slope_stderr, 0.0, 1e-12);
}

TEST(Statistics, SlopeIntervalCoversTruth) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.3);
  int covered = 0;
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> x, y;
    for (int i = 0; i < 12; ++i) {
      x.push_back(i);
      y.push_back(-0.5 * i + 2 + noise(rng));
    }
    const auto fit = fit_line(x, y);
    covered += (fit.slope_lo <= -0.5 && -0.5 <= fit.slope_hi) ? 1 : 0;
  }
  // 95% nominal; binomial spread over 400 reps is about 1.1%.
  EXPECT_GT(covered, static_cast<int>(0.91 * reps));
  EXPECT_LT(covered, static_cast<int>(0.99 * reps));
}

TEST(Statistics, FitRejectsDegenerateInput) {
  EXPECT_THROW(fit_line({1}, {1}), PreconditionError);
  EXPECT_THROW(fit_line({1, 1}, {1, 2}), PreconditionError);
  EXPECT_THROW(fit_line({1, 2}, {1}), PreconditionError);
}

TEST(Statistics, ClopperPearsonKnownValues) {
  const auto zero = binomial_interval(0, 10);
  EXPECT_DOUBLE_EQ(zero.lo, 0.0);
  EXPECT_NEAR(zero.hi, 1 - std::pow(0.025, 0.1), 1e-12);
  const auto all = binomial_interval(10, 10);
  EXPECT_DOUBLE_EQ(all.hi, 1.0);
  EXPECT_NEAR(all.lo, std::pow(0.025, 0.1), 1e-12);
  const auto mid = binomial_interval(50, 100);
  EXPECT_NEAR(mid.lo, 0.3983, 1e-4);
  EXPECT_NEAR(mid.hi, 0.6017, 1e-4);
  EXPECT_THROW(binomial_interval(3, 2), PreconditionError);
}

// A tail event of μ with known probability: all edges above q_-+h.
TEST(Statistics, BinomialIntervalCoversTailEventProbability) {
  const LatticeGraph g(LatticeBox{1, {}, 4});
  const auto mu = SingleSiteMeasure::uniform(0, 1);
  const double h = 0.1;
  const double truth = std::pow(1 - mu.interval_mass(0, h), static_cast<double>(g.num_edges()));
  int covered = 0;
  const int runs = 200;
  for (int run = 0; run < runs; ++run) {
    std::size_t k = 0;
    const int n = 200;
    for (int s = 0; s < n; ++s) {
      const auto cfg = sample_config(g, mu, 1000 + run, s);
      k += cfg.min() >= h ? 1 : 0;
    }
    const auto p = binomial_interval(k, n);
    covered += (p.lo <= truth && truth <= p.hi) ? 1 : 0;
  }
  EXPECT_GE(covered, static_cast<int>(0.9 * runs));
}

TEST(Statistics, KsDistanceOfExactQuantiles) {
  std::vector<double> v;
  for (int i = 0; i < 1000; ++i) v.push_back((i + 0.5) / 1000.0);
  EXPECT_NEAR(ks_distance(v, [](double x) { return x; }), 0.0005, 1e-12);
}

TEST(Statistics, Median) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
}
