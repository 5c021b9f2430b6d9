#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossglmm/likelihood.hpp"
#include "crossglmm/model.hpp"

namespace crossglmm {

enum class FitMethod { SubsetDiagonal, SubsetPairs, Quadrature, MonteCarlo, FiniteGrid };

std::string fit_method_name(FitMethod method);

struct FitResult {
  Theta theta_hat;
  /// Objective at theta_hat; re-evaluating reproduces it.
  double loglik = 0.0;
  bool converged = false;
  /// Some free component sits on the parameter box.
  bool at_boundary = false;
  long long evaluations = 0;
  FitMethod method = FitMethod::Quadrature;
  std::optional<double> mc_std_error;
  int grid_index = -1;  // fit_finite_mle only
  std::vector<double> grid_loglik;
};

/// The diagonal proportion is 0 or 1, so p0(mu) = ybar has no finite root.
class SubsetMleDiverges : public std::domain_error {
 public:
  SubsetMleDiverges() : std::domain_error("subset MLE diverges") {}
};

/// Subset MLE. `model` supplies the free mask and the known values.
///
/// mu only: solves p0(mu, psi2) = mean of the diagonal responses by bisection.
/// All free: (mu, psi2) by simplex on the replicate-pair likelihood, then
/// gamma in [0, 1] by scalar search on the off-diagonal pair likelihood with
/// (mu, psi2) plugged in.
FitResult fit_subset_mle(const ResponseTable& data, const Theta& model, int order = kDefaultOrder);

struct LikelihoodOptions {
  LikelihoodMethod method = LikelihoodMethod::ExactQuadrature;
  int order = kDefaultOrder;
  int mc_draws = 1000;
  std::uint64_t mc_seed = 1;
  int shift_order = kDefaultShiftOrder;
};

struct FullFitOptions {
  LikelihoodOptions likelihood;
  /// Start from the subset MLE; otherwise (or when it fails) from theta_init.
  bool init_from_subset = true;
  double tol = 1e-6;          // on the working scale
  double mu_bracket = 2.0;    // half-width of the first mu bracket
  int max_iter = 2000;
};

/// Maximizes the marginal likelihood over the free components of theta_init.
/// Only mu free: golden-section search; otherwise simplex on the working scale.
/// The returned loglik is never below the starting point's.
FitResult fit_full_mle(const ResponseTable& data, const Theta& theta_init,
                       const FullFitOptions& options = {});

/// Argmax of the likelihood over a finite grid. Ties go to the lowest index.
FitResult fit_finite_mle(const ResponseTable& data, const std::vector<Theta>& grid,
                         const LikelihoodOptions& options = {});

struct CloneConfig {
  int K = 1;
  int B = 1000;
  int burn_in = 1000;
  /// Initial point and prior centre; defaults to the subset MLE.
  std::optional<Theta> prior_mean;
  /// Working scale (log variances). Empty: from the subset information.
  Eigen::VectorXd prior_sd;
  /// Working scale. Empty: 2.4 / sqrt(d) * prior_sd.
  Eigen::VectorXd proposal_sd;
  std::uint64_t seed = 1;
  int order = kDefaultOrder;
  /// Rescale the proposal once, halfway through burn-in, when the acceptance
  /// rate so far is outside [0.2, 0.4].
  bool adapt = true;
};

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double ess = 0.0;
};

struct DcResult {
  Theta posterior_mean;
  /// K times the sample covariance of the retained draws (natural scale).
  Eigen::MatrixXd scaled_cov;
  double acceptance_rate = 0.0;
  std::vector<ParamSummary> chain_summary;
  /// Acceptance after burn-in outside (0.05, 0.7).
  bool acceptance_warning = false;
  /// Final proposal sd on the working scale.
  Eigen::VectorXd proposal_sd;
  Theta prior_mean;
  Eigen::VectorXd prior_sd;
};

/// Data cloning: random-walk Metropolis on the free components (variances on
/// the log scale) targeting exp(K l(theta)) pi(theta), with l the quadrature
/// log-likelihood and pi independent normals on the working scale.
/// `model` supplies the free mask and the known values.
DcResult fit_dc_mle(const ResponseTable& data, const Theta& model, const CloneConfig& cfg);

/// Prior used by fit_dc_mle when none is given: centred at the subset MLE
/// with sd from the inverse subset information.
std::pair<Theta, Eigen::VectorXd> default_dc_prior(const ResponseTable& data, const Theta& model,
                                                   int order = kDefaultOrder);

}  // namespace crossglmm
