#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <vector>
#include <stdexcept>

#include "crossglmm/model.hpp"
#include "crossglmm/quadrature.hpp"

namespace crossglmm {

enum class LikelihoodMethod { ExactQuadrature, MonteCarlo };

struct LikelihoodValue {
  double loglik = 0.0;
  LikelihoodMethod method = LikelihoodMethod::ExactQuadrature;
  /// Delta-method standard error of loglik; set iff method == MonteCarlo.
  std::optional<double> mc_std_error;
  /// Integrand evaluations (outer tensor nodes or Monte-Carlo draws).
  long long evaluations = 0;
};

/// log p_theta(y) for the full table.
///
/// The design is split into connected components of its row/column graph and
/// the likelihood factorizes over them. Within a component the smaller factor
/// is integrated by an outer tensor rule and every column of the other factor
/// by a one-dimensional inner rule:
///
///   L = E_u [ prod_j E_v [ prod_{i,k} f(y_ijk | u_i, v_j) ] ].
///
/// Underflow: each row's contribution to a column is stored as
/// exp(g - max_t g) with the shift max_t g carried separately in log space, so
/// column integrals are formed from factors in (0, 1]. A column whose scaled
/// integral still underflows is recomputed by a log-sum-exp over the inner
/// nodes. Outer nodes are combined by a streaming log-sum-exp.
///
/// Throws QuadratureCapError when order^dims exceeds `cap` for a component.
LikelihoodValue marginal_loglik_exact(const ResponseTable& data, const Theta& theta,
                                      int order = kDefaultOrder, double cap = kTensorCap);

/// True when marginal_loglik_exact fits under `cap` for every component.
bool exact_within_cap(const CrossedDesign& design, int order = kDefaultOrder,
                      double cap = kTensorCap);

inline constexpr int kDefaultShiftOrder = 8;

/// Monte-Carlo over the outer random effects with the same inner column
/// quadrature. Each standard-normal draw z is split into its mean and its
/// deviations: the deviations sd * (z - mean(z)) are used as drawn, while the
/// common shift (distributed N(0, sd^2 / dims) independently of them) is
/// integrated by a `shift_order`-point rule. The per-draw value is therefore
/// E[prod_j inner_j | deviations], an unbiased estimate of the likelihood
/// with far less weight degeneracy than raw prior draws. A one-dimensional
/// outer factor is integrated exactly at `order`.
///
/// Draws are scaled by the current standard deviation, so a fixed seed gives
/// common random numbers across theta. Requires draws >= 100.
LikelihoodValue marginal_loglik_mc(const ResponseTable& data, const Theta& theta, int draws,
                                   std::uint64_t seed, int order = kDefaultOrder,
                                   int shift_order = kDefaultShiftOrder);

/// Standard-normal draws for marginal_loglik_mc, generated once per design and
/// seed so repeated evaluations share them.
class McDraws {
 public:
  McDraws(const CrossedDesign& design, int draws, std::uint64_t seed);
  int draws() const { return draws_; }
  /// Block for component `c`: draws x outer-dimension.
  const Eigen::MatrixXd& block(std::size_t c) const { return blocks_.at(c); }

 private:
  int draws_;
  std::vector<Eigen::MatrixXd> blocks_;
};

LikelihoodValue marginal_loglik_mc(const ResponseTable& data, const Theta& theta,
                                   const McDraws& draws, int order = kDefaultOrder,
                                   int shift_order = kDefaultShiftOrder);

/// p0(lambda) = E h(lambda + xi), xi ~ N(0, psi2).
double p0(double lambda, double psi2, int order = kDefaultOrder);

/// Bernoulli(p0(mu, psi2)) likelihood of the diagonal subset y_ii (k = 1).
LikelihoodValue subset_diag_loglik(const ResponseTable& data, const Theta& theta,
                                   int order = kDefaultOrder);

/// Mass of one ordered outcome of a replicate pair, indexed by the number of
/// successes: E[h^s (1-h)^(2-s)] with h = h(mu + xi), xi ~ N(0, psi2).
std::array<double, 3> replicate_pair_masses(double mu, double psi2, int order = kDefaultOrder);

/// Sum over replicate pairs on the diagonal of log p_theta(y_ii1, y_ii2).
LikelihoodValue subset_pair_loglik(const ResponseTable& data, const Theta& theta,
                                   int order = kDefaultOrder);

struct MValues {
  double m1;
  double m2;
};

/// (E h(mu + psi Z), E h^2(mu + psi Z)).
MValues m_function(double mu, double psi2, int order = kDefaultOrder);

/// Outcome masses of an off-diagonal pair (y_{i,2i-1}, y_{i,2i}); entry
/// (a, b) is the mass of (a, b). Requires psi2 > 0.
Eigen::Matrix2d offdiag_pair_masses(const Theta& theta, int order = kDefaultOrder);

LikelihoodValue offdiag_pair_loglik(const ResponseTable& data, const Theta& theta,
                                    int order = kDefaultOrder);

/// Mass of (1, 1) for an off-diagonal pair at correlation gamma.
double p_gamma_11(double gamma, double mu0, double psi2_0, int order = kDefaultOrder);

/// Outcome masses of one subset element, indexed by the element's bit pattern
/// (bit e is the response at the element's e-th position): 2 outcomes for
/// Diagonal, 4 for the pair kinds.
std::vector<double> subset_element_masses(const Theta& theta, SubsetKind kind,
                                          int order = kDefaultOrder);

inline constexpr double kFdStep = 1e-4;

/// Throws std::domain_error unless every free component is at least `step`
/// inside the parameter box on the working scale.
void require_interior(const Theta& theta, double step);

/// Central-difference gradient of `objective` over the free parameters.
/// Variance components are stepped on the log scale; the result is on the
/// natural scale.
template <typename Objective>
Eigen::VectorXd fd_gradient(Objective&& objective, const Theta& theta, double step = kFdStep) {
  require_interior(theta, step);
  const Eigen::VectorXd w = to_working(theta);
  const Eigen::VectorXd jac = working_jacobian(theta);
  Eigen::VectorXd grad(w.size());
  for (Eigen::Index a = 0; a < w.size(); ++a) {
    Eigen::VectorXd up = w, down = w;
    up[a] += step;
    down[a] -= step;
    const double fu = objective(from_working(theta, up));
    const double fd = objective(from_working(theta, down));
    grad[a] = (fu - fd) / (2.0 * step) / jac[a];
  }
  return grad;
}

/// Gradient of marginal_loglik_exact over the free parameters.
Eigen::VectorXd loglik_gradient_fd(const ResponseTable& data, const Theta& theta,
                                   double step = kFdStep, int order = kDefaultOrder);

}  // namespace crossglmm
