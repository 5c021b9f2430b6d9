#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace crossglmm {

/// Gauss-Hermite rule for expectations against N(0, 1) (probabilists'
/// convention): E f(Z) ~= sum_t weights[t] * f(nodes[t]).
struct QuadratureRule {
  int order = 0;
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

inline constexpr int kDefaultOrder = 30;
inline constexpr double kTensorCap = 1e7;

/// Thrown when a tensor-product rule would exceed the node budget.
class QuadratureCapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Golub-Welsch nodes refined by Newton steps on the normalized Hermite
/// recurrence. Requires 1 <= order <= 100.
QuadratureRule gauss_hermite(int order);

/// Process-wide cache of gauss_hermite(order); thread-safe.
const QuadratureRule& cached_gauss_hermite(int order);

/// E f(mean + sqrt(var) Z). var == 0 evaluates f(mean) exactly.
template <typename F>
double expect_1d(F&& f, double mean, double var, const QuadratureRule& rule) {
  if (var < 0.0) throw std::invalid_argument("expect_1d: negative variance");
  if (var == 0.0) return f(mean);
  const double sd = std::sqrt(var);
  double total = 0.0;
  for (Eigen::Index t = 0; t < rule.nodes.size(); ++t) {
    total += rule.weights[t] * f(mean + sd * rule.nodes[t]);
  }
  return total;
}

/// Number of nodes in a `dims`-fold tensor of `rule`; throws
/// QuadratureCapError above `cap`.
std::uint64_t tensor_size(int dims, int order, double cap = kTensorCap);

/// E f(sqrt(var) Z) for Z ~ N(0, I_dims) over the full tensor grid.
template <typename F>
double expect_tensor(F&& f, int dims, double var, const QuadratureRule& rule,
                     double cap = kTensorCap) {
  if (dims < 1) throw std::invalid_argument("expect_tensor: dims must be positive");
  if (var < 0.0) throw std::invalid_argument("expect_tensor: negative variance");
  if (var == 0.0) return f(Eigen::VectorXd::Zero(dims).eval());
  tensor_size(dims, rule.order, cap);
  const double sd = std::sqrt(var);
  const int q = rule.order;
  Eigen::VectorXi idx = Eigen::VectorXi::Zero(dims);
  Eigen::VectorXd point(dims);
  for (int d = 0; d < dims; ++d) point[d] = sd * rule.nodes[0];
  double total = 0.0;
  while (true) {
    double w = 1.0;
    for (int d = 0; d < dims; ++d) w *= rule.weights[idx[d]];
    total += w * f(static_cast<const Eigen::VectorXd&>(point));
    int d = 0;
    while (d < dims) {
      if (++idx[d] < q) {
        point[d] = sd * rule.nodes[idx[d]];
        break;
      }
      idx[d] = 0;
      point[d] = sd * rule.nodes[0];
      ++d;
    }
    if (d == dims) break;
  }
  return total;
}

/// E f(X, Y) for a centered bivariate normal with var(X) = var(Y) = var and
/// cor(X, Y) = corr, via X = s Z1, Y = s (corr Z1 + sqrt(1 - corr^2) Z2).
template <typename F>
double expect_bivariate(F&& f, double var, double corr, const QuadratureRule& rule) {
  if (!(var > 0.0)) throw std::invalid_argument("expect_bivariate: variance must be positive");
  if (!(std::abs(corr) <= 1.0)) throw std::invalid_argument("expect_bivariate: |corr| > 1");
  const double sd = std::sqrt(var);
  const double resid = std::sqrt(std::max(0.0, 1.0 - corr * corr));
  double total = 0.0;
  for (Eigen::Index a = 0; a < rule.nodes.size(); ++a) {
    const double x = sd * rule.nodes[a];
    if (resid == 0.0) {
      total += rule.weights[a] * f(x, corr * x);
      continue;
    }
    double inner = 0.0;
    for (Eigen::Index b = 0; b < rule.nodes.size(); ++b) {
      inner += rule.weights[b] * f(x, corr * x + sd * resid * rule.nodes[b]);
    }
    total += rule.weights[a] * inner;
  }
  return total;
}

}  // namespace crossglmm
