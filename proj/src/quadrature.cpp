#include "crossglmm/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <map>
#include <memory>
#include <mutex>

namespace crossglmm {

namespace {

// Normalized probabilists' Hermite functions psi_k = He_k / sqrt(k!),
// psi_{k+1} = (x psi_k - sqrt(k) psi_{k-1}) / sqrt(k+1). Returns psi_n and
// psi_{n-1} at x.
std::pair<double, double> hermite_pair(int n, double x) {
  double prev = 0.0;
  double cur = 1.0;
  for (int k = 0; k < n; ++k) {
    const double next = (x * cur - std::sqrt(double(k)) * prev) / std::sqrt(double(k + 1));
    prev = cur;
    cur = next;
  }
  return {cur, prev};
}

}  // namespace

QuadratureRule gauss_hermite(int order) {
  if (order < 1 || order > 100) {
    throw std::invalid_argument("gauss_hermite: order must be in [1, 100], got " +
                                std::to_string(order));
  }
  QuadratureRule rule;
  rule.order = order;
  rule.nodes = Eigen::VectorXd::Zero(order);
  rule.weights = Eigen::VectorXd::Ones(order);
  if (order == 1) return rule;

  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(double(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  Eigen::VectorXd x = solver.eigenvalues();

  for (int t = 0; t < order; ++t) {
    for (int it = 0; it < 4; ++it) {
      const auto [pn, pn1] = hermite_pair(order, x[t]);
      const double step = pn / (std::sqrt(double(order)) * pn1);
      x[t] -= step;
      if (std::abs(step) < 1e-15 * (1.0 + std::abs(x[t]))) break;
    }
  }
  // Enforce exact symmetry about zero.
  for (int t = 0; t < order / 2; ++t) {
    const double a = 0.5 * (x[order - 1 - t] - x[t]);
    x[t] = -a;
    x[order - 1 - t] = a;
  }
  if (order % 2 == 1) x[order / 2] = 0.0;

  Eigen::VectorXd w(order);
  for (int t = 0; t < order; ++t) {
    const double pn1 = hermite_pair(order, x[t]).second;
    w[t] = 1.0 / (double(order) * pn1 * pn1);
  }
  for (int t = 0; t < order / 2; ++t) {
    const double a = 0.5 * (w[t] + w[order - 1 - t]);
    w[t] = w[order - 1 - t] = a;
  }
  rule.nodes = x;
  rule.weights = w / w.sum();
  return rule;
}

const QuadratureRule& cached_gauss_hermite(int order) {
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<QuadratureRule>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[order];
  if (!slot) slot = std::make_unique<QuadratureRule>(gauss_hermite(order));
  return *slot;
}

std::uint64_t tensor_size(int dims, int order, double cap) {
  const double size = std::pow(double(order), double(dims));
  if (size > cap) {
    throw QuadratureCapError("design too large for exact quadrature: " + std::to_string(order) +
                             "^" + std::to_string(dims) + " nodes exceeds the cap of " +
                             std::to_string(static_cast<long long>(cap)));
  }
  return static_cast<std::uint64_t>(size + 0.5);
}

}  // namespace crossglmm
