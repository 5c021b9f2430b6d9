#pragma once

#include <Eigen/Core>

#include <functional>
#include <stdexcept>

namespace crossglmm {

/// Raised when an objective returns NaN or an infinity where a finite value is required.
class NonFiniteObjective : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScalarOptimum {
  double argmax = 0.0;
  double max = 0.0;
  long long evaluations = 0;
};

/// Golden-section maximization of f on [lo, hi] to within `tol` on the
/// argument. The endpoints are compared at the end, so a monotone f returns
/// the maximizing endpoint exactly.
ScalarOptimum optimize_scalar(const std::function<double(double)>& f, double lo, double hi,
                              double tol = 1e-8);

struct SimplexOptions {
  double tol = 1e-6;  // simplex diameter
  int max_iter = 2000;
  /// Optional box; points are projected onto it.
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct SimplexOptimum {
  Eigen::VectorXd argmax;
  double max = 0.0;
  bool converged = false;
  int iterations = 0;
  long long evaluations = 0;
};

/// Nelder-Mead maximization. `scale` sets the initial simplex edge per
/// coordinate. NaN values are treated as -inf. On hitting max_iter the best
/// vertex is returned with converged = false.
SimplexOptimum optimize_simplex(const std::function<double(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& start, const Eigen::VectorXd& scale,
                                const SimplexOptions& options = {});

}  // namespace crossglmm
