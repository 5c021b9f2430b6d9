#include <gtest/gtest.h>

#include "crossglmm/model.hpp"
#include "crossglmm/quadrature.hpp"
#include "oracle.hpp"

using namespace crossglmm;

TEST(GaussHermite, ReproducesNormalMoments) {
  const auto rule = gauss_hermite(20);
  EXPECT_NEAR(rule.weights.sum(), 1.0, 1e-14);
  // E Z^{2k} = (2k - 1)!!, exact for 2k <= 2 * order - 1.
  double dfact = 1.0;
  for (int k = 1; k <= 19; ++k) {
    dfact *= 2 * k - 1;
    const double mom = (rule.weights.array() * rule.nodes.array().pow(2 * k)).sum();
    EXPECT_NEAR(mom / dfact, 1.0, 1e-11) << "k=" << k;
    EXPECT_NEAR((rule.weights.array() * rule.nodes.array().pow(2 * k - 1)).sum(), 0.0, 1e-9 * dfact);
  }
}

TEST(GaussHermite, NodesSymmetricAndSorted) {
  for (int order : {1, 2, 7, 30, 100}) {
    const auto rule = gauss_hermite(order);
    ASSERT_EQ(rule.nodes.size(), order);
    for (int t = 0; t < order; ++t) {
      EXPECT_NEAR(rule.nodes[t], -rule.nodes[order - 1 - t], 1e-12);
      EXPECT_NEAR(rule.weights[t], rule.weights[order - 1 - t], 1e-15);
      if (t > 0) EXPECT_LT(rule.nodes[t - 1], rule.nodes[t]);
    }
  }
  EXPECT_THROW(gauss_hermite(0), std::invalid_argument);
  EXPECT_THROW(gauss_hermite(101), std::invalid_argument);
}

TEST(GaussHermite, TwoPointRuleIsExact) {
  const auto rule = gauss_hermite(2);
  EXPECT_NEAR(rule.nodes[1], 1.0, 1e-15);
  EXPECT_NEAR(rule.weights[0], 0.5, 1e-15);
}

TEST(GaussHermite, CacheReturnsSameRule) {
  const auto& a = cached_gauss_hermite(17);
  const auto& b = cached_gauss_hermite(17);
  EXPECT_EQ(&a, &b);
  EXPECT_EQ(a.nodes, gauss_hermite(17).nodes);
}

TEST(Expect1d, LogisticMatchesSimpsonOracle) {
  const auto& rule = cached_gauss_hermite(kDefaultOrder);
  for (double var : {0.25, 1.0, 2.0}) {
    for (double mean : {-3.0, 0.3, 4.0}) {
      const double gh = expect_1d([](double x) { return logistic(x); }, mean, var, rule);
      EXPECT_NEAR(gh, oracle::expect(oracle::logistic, mean, var), 1e-9) << mean << " " << var;
    }
  }
  const double gh40 = expect_1d([](double x) { return logistic(x); }, 1.0, 2.0, cached_gauss_hermite(40));
  EXPECT_NEAR(gh40, oracle::expect(oracle::logistic, 1.0, 2.0, 20000), 1e-9);
}

// Order o against o + 5 across the parameter box. Gauss-Hermite converges
// slowly once the normal's spread dwarfs the logistic's pole distance, so this
// fails for large variances (see README, "Numerical accuracy").
TEST(Expect1d, OrderStabilityAcrossBox) {
  auto h = [](double x) { return logistic(x); };
  auto h2 = [](double x) { return logistic(x) * logistic(x); };
  double worst = 0.0, worst_var = 0.0;
  for (double var : {0.5, 2.0, 8.0, 25.0}) {
    for (double mean : {-10.0, -2.0, 0.0, 3.0, 10.0}) {
      for (int o : {30}) {
        const double d1 = std::abs(expect_1d(h, mean, var, cached_gauss_hermite(o)) -
                                   expect_1d(h, mean, var, cached_gauss_hermite(o + 5)));
        const double d2 = std::abs(expect_1d(h2, mean, var, cached_gauss_hermite(o)) -
                                   expect_1d(h2, mean, var, cached_gauss_hermite(o + 5)));
        if (std::max(d1, d2) > worst) {
          worst = std::max(d1, d2);
          worst_var = var;
        }
      }
    }
  }
  EXPECT_LE(worst, 1e-8) << "worst at var " << worst_var;
}

TEST(Expect1d, ZeroVarianceIsPointEvaluation) {
  const auto& rule = cached_gauss_hermite(5);
  EXPECT_EQ(expect_1d([](double x) { return x * x; }, 3.0, 0.0, rule), 9.0);
  EXPECT_THROW(expect_1d([](double x) { return x; }, 0.0, -1.0, rule), std::invalid_argument);
}

TEST(ExpectTensor, FactorizesForProducts) {
  const auto& rule = cached_gauss_hermite(12);
  const double v = 1.3;
  auto f = [](const Eigen::VectorXd& x) { return logistic(x[0]) * std::exp(0.2 * x[1]) * x[2] * x[2]; };
  const double tensor = expect_tensor(f, 3, v, rule);
  const double a = expect_1d([](double x) { return logistic(x); }, 0.0, v, rule);
  const double b = std::exp(0.02 * v);
  EXPECT_NEAR(tensor, a * b * v, 1e-12);
}

TEST(ExpectTensor, CapIsEnforced) {
  EXPECT_THROW(tensor_size(5, 30), QuadratureCapError);
  EXPECT_EQ(tensor_size(4, 30), 810000u);
  const auto& rule = cached_gauss_hermite(30);
  EXPECT_THROW(expect_tensor([](const Eigen::VectorXd&) { return 1.0; }, 5, 1.0, rule), QuadratureCapError);
  EXPECT_NEAR(expect_tensor([](const Eigen::VectorXd&) { return 1.0; }, 5, 0.0, rule), 1.0, 0.0);
}

TEST(ExpectBivariate, MatchesOracleAndEndpoints) {
  const auto& rule = cached_gauss_hermite(kDefaultOrder);
  auto f = [](double x, double y) { return logistic(0.4 + x) * logistic(0.4 + y); };
  for (double corr : {-0.5, 0.0, 0.3, 0.9}) {
    const double ref = oracle::expect2(f, 2.0, corr, 400);
    EXPECT_NEAR(expect_bivariate(f, 2.0, corr, rule), ref, 1e-8) << corr;
  }
  // corr = 1 collapses to a one-dimensional expectation of f(x, x).
  const double one = expect_bivariate(f, 2.0, 1.0, rule);
  EXPECT_NEAR(one, expect_1d([&](double x) { return f(x, x); }, 0.0, 2.0, rule), 1e-15);
  EXPECT_NEAR(one, oracle::expect([](double x) { return std::pow(logistic(0.4 + x), 2); }, 0.0, 2.0), 1e-8);
  EXPECT_THROW(expect_bivariate(f, 1.0, 1.5, rule), std::invalid_argument);
}
