#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "crossglmm/estimators.hpp"
#include "crossglmm/harness.hpp"
#include "crossglmm/optimize.hpp"

using namespace crossglmm;

TEST(Scalar, Quadratic) {
  const auto r = optimize_scalar([](double x) { return -(x - 2) * (x - 2); }, 0.0, 5.0, 1e-8);
  EXPECT_NEAR(r.argmax, 2.0, 1e-8);
  EXPECT_NEAR(r.max, 0.0, 1e-14);
}

TEST(Scalar, ConstantStaysInBracket) {
  const auto r = optimize_scalar([](double) { return 3.5; }, -1.0, 1.0);
  EXPECT_GE(r.argmax, -1.0);
  EXPECT_LE(r.argmax, 1.0);
  EXPECT_EQ(r.max, 3.5);
}

TEST(Scalar, MonotoneReturnsEndpoint) {
  const auto r = optimize_scalar([](double x) { return x; }, -1.0, 4.0);
  EXPECT_EQ(r.argmax, 4.0);
}

TEST(Scalar, Errors) {
  EXPECT_THROW(optimize_scalar([](double x) { return x > 1 ? std::nan("") : x; }, 0.0, 3.0),
               NonFiniteObjective);
  EXPECT_THROW(optimize_scalar([](double x) { return x; }, 1.0, 1.0), std::invalid_argument);
}

TEST(Scalar, AgreesWithSubsetBisection) {
  const Theta th0 = Theta::mu_only(0.4, 1.0, 1.0);
  const ResponseTable data = simulate(CrossedDesign::full_crossing(30, 30), th0, 5);
  const FitResult bis = fit_subset_mle(data, th0);
  const auto gold = optimize_scalar(
      [&](double mu) { return subset_diag_loglik(data, Theta::mu_only(mu, 1.0, 1.0)).loglik; }, -5.0, 5.0,
      1e-9);
  EXPECT_NEAR(gold.argmax, bis.theta_hat.mu, 1e-6);
}

TEST(Simplex, QuadraticBowl) {
  const Eigen::Vector3d c(1.0, -2.0, 0.5);
  const auto r = optimize_simplex([&](const Eigen::VectorXd& x) { return -(x - c).squaredNorm(); },
                                  Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones(), {1e-8, 5000, {}, {}});
  EXPECT_TRUE(r.converged);
  EXPECT_LT((r.argmax - c).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Simplex, StartAtOptimum) {
  const Eigen::Vector2d c(0.3, 0.7);
  SimplexOptions opt;
  opt.tol = 1e-6;
  const auto r = optimize_simplex([&](const Eigen::VectorXd& x) { return -(x - c).squaredNorm(); }, c,
                                  Eigen::Vector2d::Constant(1e-7), opt);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_LT((r.argmax - c).norm(), 1e-6);
}

TEST(Simplex, MaxIterFlagsNonConvergence) {
  SimplexOptions opt;
  opt.tol = 1e-14;
  opt.max_iter = 5;
  const auto r = optimize_simplex([](const Eigen::VectorXd& x) { return -x.squaredNorm(); },
                                  Eigen::Vector2d(3, 3), Eigen::Vector2d::Ones(), opt);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 5);
  EXPECT_LT(r.argmax.squaredNorm(), 18.0);
}

TEST(Simplex, BoxProjection) {
  SimplexOptions opt;
  opt.lower = Eigen::Vector2d(-1, -1);
  opt.upper = Eigen::Vector2d(1, 1);
  const auto r = optimize_simplex([](const Eigen::VectorXd& x) { return x.sum(); }, Eigen::Vector2d::Zero(),
                                  Eigen::Vector2d::Constant(0.5), opt);
  EXPECT_NEAR(r.argmax[0], 1.0, 1e-6);
  EXPECT_NEAR(r.argmax[1], 1.0, 1e-6);
}

TEST(Simplex, NanTreatedAsMinusInfinity) {
  const auto r = optimize_simplex(
      [](const Eigen::VectorXd& x) { return x[0] < 0 ? std::nan("") : -(x[0] - 1) * (x[0] - 1); },
      Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, 1.0));
  EXPECT_NEAR(r.argmax[0], 1.0, 1e-5);
}
