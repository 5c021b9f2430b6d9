#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "crossglmm/estimators.hpp"
#include "crossglmm/harness.hpp"
#include "crossglmm/information.hpp"

using namespace crossglmm;

namespace {

ResponseTable table(int m, int n, std::vector<std::uint8_t> y) {
  return ResponseTable(CrossedDesign::full_crossing(m, n), std::move(y));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

TEST(SubsetMle, DivergesOnConstantDiagonal) {
  const Theta model = Theta::mu_only(0, 1, 1);
  EXPECT_THROW(fit_subset_mle(table(2, 2, {1, 0, 0, 1}), model), SubsetMleDiverges);
  EXPECT_THROW(fit_subset_mle(table(2, 2, {0, 1, 1, 0}), model), SubsetMleDiverges);
}

TEST(SubsetMle, HalfGivesZero) {
  const FitResult r = fit_subset_mle(table(2, 2, {1, 1, 1, 0}), Theta::mu_only(0, 1, 1));
  EXPECT_NEAR(r.theta_hat.mu, 0.0, 1e-8);
  EXPECT_EQ(r.method, FitMethod::SubsetDiagonal);
  EXPECT_TRUE(r.converged);
}

TEST(SubsetMle, DegenerateVariancesInvertLogistic) {
  const ResponseTable t = table(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 0});
  const FitResult r = fit_subset_mle(t, Theta::mu_only(0, 0, 0));
  EXPECT_NEAR(r.theta_hat.mu, logit(2.0 / 3.0), 1e-10);
  EXPECT_NEAR(r.loglik, subset_diag_loglik(t, r.theta_hat).loglik, 1e-12);
}

TEST(SubsetMle, RejectsPartialMasks) {
  Theta model(0, 1, 1, {true, true, false});
  EXPECT_THROW(fit_subset_mle(table(2, 2, {1, 1, 1, 0}), model), std::invalid_argument);
}

TEST(SubsetMle, ThreeParameterTwoStage) {
  const Theta th0(0.2, 1.0, 1.0);
  const ResponseTable data = simulate(CrossedDesign::salamander_style(20, 40), th0, 3);
  const FitResult r = fit_subset_mle(data, th0);
  EXPECT_EQ(r.method, FitMethod::SubsetPairs);
  EXPECT_NEAR(r.loglik,
              subset_pair_loglik(data, r.theta_hat).loglik + offdiag_pair_loglik(data, r.theta_hat).loglik,
              1e-9);
  // Stage 2 cannot beat stage 1 on the pair likelihood, which ignores gamma.
  Theta other = r.theta_hat;
  other.sigma2 = other.tau2 = 0.5 * r.theta_hat.psi2();
  EXPECT_NEAR(subset_pair_loglik(data, other).loglik, subset_pair_loglik(data, r.theta_hat).loglik, 1e-9);
  EXPECT_GE(offdiag_pair_loglik(data, r.theta_hat).loglik, offdiag_pair_loglik(data, other).loglik - 1e-9);
}

// Envelope at 60 x 60 with diagonal replicate pairs. The variance components
// rest on 60 replicate pairs and 30 off-diagonal pairs, whose Cramer-Rao sds
// at the truth are about 1.4 and 1.8, so this fails (see README, "Numerical
// accuracy").
TEST(SubsetMle, ThreeParameterEnvelopeSixtyBySixty) {
  const Theta th0(0.2, 1.0, 1.0);
  const CrossedDesign d = CrossedDesign::salamander_style(60, 60);
  int inside = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const FitResult r = fit_subset_mle(simulate(d, th0, derive_seed(2024, 60, 60, rep)), th0);
    const Eigen::Vector3d err(r.theta_hat.mu - th0.mu, r.theta_hat.sigma2 - th0.sigma2,
                              r.theta_hat.tau2 - th0.tau2);
    if (err.cwiseAbs().maxCoeff() < 0.5) ++inside;
  }
  EXPECT_GE(inside, 95);
}

TEST(FullMle, IidBernoulliWhenVariancesVanish) {
  const ResponseTable t = table(3, 3, {1, 1, 0, 0, 1, 1, 1, 0, 1});
  FullFitOptions opt;
  opt.tol = 1e-10;
  const FitResult r = fit_full_mle(t, Theta::mu_only(0, 0, 0), opt);
  // Golden section on a value-flat optimum resolves x to about sqrt(eps).
  EXPECT_NEAR(r.theta_hat.mu, logit(6.0 / 9.0), 1e-7);
  EXPECT_FALSE(r.at_boundary);
  EXPECT_TRUE(r.converged);
}

TEST(FullMle, AllOnesHitsBound) {
  const FitResult r = fit_full_mle(table(2, 2, {1, 1, 1, 1}), Theta::mu_only(0, 1, 1));
  EXPECT_TRUE(r.at_boundary);
  EXPECT_NEAR(r.theta_hat.mu, kMuUpper, 1e-6);
}

TEST(FullMle, LoglikReevaluatesAndAscends) {
  const Theta th0 = Theta::mu_only(0.3, 1.0, 1.0);
  const ResponseTable data = simulate(CrossedDesign::full_crossing(3, 4), th0, 21);
  const FitResult r = fit_full_mle(data, th0);
  EXPECT_NEAR(r.loglik, marginal_loglik_exact(data, r.theta_hat).loglik, 1e-9);
  const FitResult s = fit_subset_mle(data, th0);
  EXPECT_GE(r.loglik, marginal_loglik_exact(data, s.theta_hat).loglik);
  EXPECT_LT(std::abs(loglik_gradient_fd(data, r.theta_hat)[0]), 1e-4);
}

TEST(FullMle, CapExceededForQuadrature) {
  const Theta th0 = Theta::mu_only(0.3, 1.0, 1.0);
  const ResponseTable data = simulate(CrossedDesign::full_crossing(6, 6), th0, 1);
  EXPECT_THROW(fit_full_mle(data, th0), QuadratureCapError);
}

TEST(FullMle, ThreeParameterStationary) {
  const Theta th0(0.3, 1.0, 1.0);
  const ResponseTable data = simulate(CrossedDesign::full_crossing(4, 4, 2), th0, 4);
  FullFitOptions opt;
  opt.tol = 1e-8;
  opt.likelihood.order = 20;
  const FitResult r = fit_full_mle(data, th0, opt);
  ASSERT_FALSE(r.at_boundary) << serialize_theta(r.theta_hat);
  EXPECT_TRUE(r.converged);
  const Eigen::VectorXd g = loglik_gradient_fd(data, r.theta_hat, kFdStep, 20);
  EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-3) << g.transpose();
}

TEST(FullMle, SixBySixBeatsSubset) {
  const Theta th0 = Theta::mu_only(0.5, 1.0, 1.0);
  const CrossedDesign d = CrossedDesign::full_crossing(6, 6);
  FullFitOptions opt;
  opt.likelihood.method = LikelihoodMethod::MonteCarlo;
  opt.likelihood.mc_draws = 500;
  opt.likelihood.order = 20;
  opt.tol = 1e-3;
  std::vector<double> full, full_err, sub_err;
  for (int rep = 0; rep < 50; ++rep) {
    const std::uint64_t seed = derive_seed(2024, 6, 6, rep);
    const ResponseTable data = simulate(d, th0, seed);
    opt.likelihood.mc_seed = splitmix64(seed + 1);
    const FitResult r = fit_full_mle(data, th0, opt);
    full.push_back(r.theta_hat.mu);
    full_err.push_back(std::abs(r.theta_hat.mu - 0.5));
    try {
      sub_err.push_back(std::abs(fit_subset_mle(data, th0).theta_hat.mu - 0.5));
    } catch (const SubsetMleDiverges&) {
      sub_err.push_back(INFINITY);
    }
  }
  double mean = 0.0, var = 0.0;
  for (double x : full) mean += x / 50.0;
  for (double x : full) var += (x - mean) * (x - mean) / 49.0;
  EXPECT_LT(std::abs(mean - 0.5), 3.0 * std::sqrt(var / 50.0));
  EXPECT_LT(median(full_err), median(sub_err));
}

TEST(FiniteMle, SingletonAndTies) {
  const ResponseTable t = table(2, 2, {1, 0, 1, 1});
  const Theta a(0, 1, 1), b(1, 1, 1);
  EXPECT_EQ(fit_finite_mle(t, {a}).theta_hat, a);
  const FitResult dup = fit_finite_mle(t, {b, a, a, b});
  EXPECT_EQ(dup.grid_index, 0);
  EXPECT_EQ(dup.grid_loglik.size(), 4u);
  const FitResult pick = fit_finite_mle(t, {Theta(-1, 1, 1), a, b});
  EXPECT_EQ(pick.grid_index, 2);
  EXPECT_THROW(fit_finite_mle(t, {}), std::invalid_argument);
}

TEST(FiniteMle, MonteCarloBeyondCap) {
  const Theta th0(0, 1, 1);
  const ResponseTable data = simulate(CrossedDesign::full_crossing(8, 8), th0, 4);
  LikelihoodOptions opt;
  opt.method = LikelihoodMethod::MonteCarlo;
  opt.mc_draws = 400;
  opt.order = 20;
  const FitResult r = fit_finite_mle(data, {Theta(-1, 1, 1), th0, Theta(1, 1, 1)}, opt);
  EXPECT_EQ(r.method, FitMethod::FiniteGrid);
  EXPECT_TRUE(r.mc_std_error.has_value());
  EXPECT_THROW(fit_finite_mle(data, {th0}), QuadratureCapError);
}

TEST(DataCloning, ZeroProposalNeverMoves) {
  const ResponseTable t = table(2, 2, {1, 1, 0, 1});
  CloneConfig cfg;
  cfg.B = 200;
  cfg.burn_in = 20;
  cfg.prior_mean = Theta::mu_only(0.25, 1, 1);
  cfg.prior_sd = Eigen::VectorXd::Constant(1, 1.0);
  cfg.proposal_sd = Eigen::VectorXd::Zero(1);
  const DcResult r = fit_dc_mle(t, Theta::mu_only(0, 1, 1), cfg);
  EXPECT_EQ(r.posterior_mean.mu, 0.25);
  EXPECT_EQ(r.scaled_cov(0, 0), 0.0);
  EXPECT_TRUE(r.acceptance_warning);
}

TEST(DataCloning, DeterministicAndPsd) {
  const Theta th0(0.1, 1.0, 1.0);
  const ResponseTable t = simulate(CrossedDesign::salamander_style(2, 4), th0, 9);
  CloneConfig cfg;
  cfg.K = 4;
  cfg.B = 300;
  cfg.burn_in = 100;
  cfg.order = 12;
  cfg.seed = 5;
  cfg.prior_mean = th0;
  cfg.prior_sd = Eigen::Vector3d::Ones();
  const DcResult a = fit_dc_mle(t, th0, cfg);
  const DcResult b = fit_dc_mle(t, th0, cfg);
  EXPECT_EQ(a.posterior_mean, b.posterior_mean);
  EXPECT_EQ(a.scaled_cov, b.scaled_cov);
  EXPECT_EQ(a.chain_summary.size(), 3u);
  EXPECT_GT(a.acceptance_rate, 0.0);
  EXPECT_LT(a.acceptance_rate, 1.0);
  EXPECT_LT((a.scaled_cov - a.scaled_cov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.scaled_cov);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
}

TEST(DataCloning, Validation) {
  const ResponseTable t = table(2, 2, {1, 1, 0, 1});
  CloneConfig cfg;
  cfg.B = 99;
  EXPECT_THROW(fit_dc_mle(t, Theta::mu_only(0, 1, 1), cfg), std::invalid_argument);
  cfg.B = 100;
  cfg.K = 0;
  EXPECT_THROW(fit_dc_mle(t, Theta::mu_only(0, 1, 1), cfg), std::invalid_argument);
}

TEST(DataCloning, DefaultPriorCentredAtSubsetMle) {
  const Theta th0 = Theta::mu_only(0.3, 1.0, 1.0);
  const ResponseTable data = simulate(CrossedDesign::full_crossing(4, 4), th0, 11);
  const auto [centre, sd] = default_dc_prior(data, th0);
  EXPECT_EQ(centre.mu, fit_subset_mle(data, th0).theta_hat.mu);
  const double is = subset_fisher_info(centre, SubsetKind::Diagonal, 4)(0, 0);
  EXPECT_NEAR(sd[0], 1.0 / std::sqrt(is), 1e-12);
}

TEST(DataCloning, PriorWashesOutAtLargeK) {
  // Reference instance: seeded 4x4, mu only.
  const Theta th0 = Theta::mu_only(0.3, 1.0, 1.0);
  const ResponseTable data = simulate(CrossedDesign::full_crossing(4, 4), th0, 11);
  CloneConfig cfg;
  cfg.K = 64;
  cfg.B = 4000;
  cfg.burn_in = 1000;
  cfg.order = 16;
  cfg.seed = 3;
  const DcResult base = fit_dc_mle(data, th0, cfg);
  cfg.prior_mean = Theta::mu_only(1.5, 1.0, 1.0);
  cfg.prior_sd = Eigen::VectorXd::Constant(1, 3.0);
  const DcResult moved = fit_dc_mle(data, th0, cfg);
  EXPECT_LT(std::abs(base.posterior_mean.mu - moved.posterior_mean.mu), 0.02);
  cfg.K = 1;
  const DcResult k1 = fit_dc_mle(data, th0, cfg);
  cfg.prior_mean.reset();
  cfg.prior_sd.resize(0);
  const DcResult k1_default = fit_dc_mle(data, th0, cfg);
  EXPECT_GT(std::abs(k1.posterior_mean.mu - k1_default.posterior_mean.mu), 0.02);
}
