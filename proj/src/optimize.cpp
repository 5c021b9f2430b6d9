#include "crossglmm/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace crossglmm {

namespace {

double checked(double v, double x) {
  if (!std::isfinite(v)) {
    throw NonFiniteObjective("objective is not finite at " + std::to_string(x));
  }
  return v;
}

}  // namespace

ScalarOptimum optimize_scalar(const std::function<double(double)>& f, double lo, double hi,
                              double tol) {
  if (!(lo < hi)) throw std::invalid_argument("optimize_scalar: need lo < hi");
  if (!(tol > 0.0)) throw std::invalid_argument("optimize_scalar: tol must be positive");
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  ScalarOptimum out;
  auto eval = [&](double x) {
    ++out.evaluations;
    return checked(f(x), x);
  };
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = eval(c), fd = eval(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = eval(d);
    }
  }
  out.argmax = fc >= fd ? c : d;
  out.max = std::max(fc, fd);
  for (double x : {lo, hi}) {
    const double fx = eval(x);
    if (fx > out.max) {
      out.argmax = x;
      out.max = fx;
    }
  }
  return out;
}

SimplexOptimum optimize_simplex(const std::function<double(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& start, const Eigen::VectorXd& scale,
                                const SimplexOptions& options) {
  const Eigen::Index d = start.size();
  if (d < 1) throw std::invalid_argument("optimize_simplex: empty start");
  if (scale.size() != d) throw std::invalid_argument("optimize_simplex: scale size mismatch");
  const bool boxed = options.lower.size() == d && options.upper.size() == d;
  if (boxed && ((start.array() < options.lower.array()).any() ||
                (start.array() > options.upper.array()).any())) {
    throw std::invalid_argument("optimize_simplex: start outside the box");
  }
  SimplexOptimum out;
  auto project = [&](Eigen::VectorXd x) {
    if (boxed) x = x.cwiseMax(options.lower).cwiseMin(options.upper);
    return x;
  };
  // Minimize g = -f internally.
  auto g = [&](const Eigen::VectorXd& x) {
    ++out.evaluations;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : -v;
  };

  std::vector<Eigen::VectorXd> pts;
  pts.push_back(start);
  for (Eigen::Index a = 0; a < d; ++a) {
    Eigen::VectorXd p = start;
    p[a] += scale[a];
    p = project(p);
    // Reflect inward when the box flattens the edge.
    if (p[a] == start[a]) p[a] = project(start - scale[a] * Eigen::VectorXd::Unit(d, a))[a];
    pts.push_back(p);
  }
  std::vector<double> vals;
  for (const auto& p : pts) vals.push_back(g(p));
  std::vector<std::size_t> order(pts.size());

  auto diameter = [&](std::size_t best) {
    double diam = 0.0;
    for (const auto& p : pts) diam = std::max(diam, (p - pts[best]).lpNorm<Eigen::Infinity>());
    return diam;
  };

  const std::size_t n = pts.size();
  while (true) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return vals[x] < vals[y]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 2];
    if (diameter(best) < options.tol) {
      out.converged = true;
      break;
    }
    if (out.iterations >= options.max_iter) break;
    ++out.iterations;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (std::size_t k = 0; k + 1 < n; ++k) centroid += pts[order[k]];
    centroid /= double(d);

    const Eigen::VectorXd xr = project(centroid + (centroid - pts[worst]));
    const double fr = g(xr);
    if (fr < vals[best]) {
      const Eigen::VectorXd xe = project(centroid + 2.0 * (centroid - pts[worst]));
      const double fe = g(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Eigen::VectorXd xc = outside ? project(centroid + 0.5 * (xr - centroid))
                                       : project(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = g(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (k == best) continue;
      pts[k] = project(pts[best] + 0.5 * (pts[k] - pts[best]));
      vals[k] = g(pts[k]);
    }
  }
  const auto best = static_cast<std::size_t>(
      std::min_element(vals.begin(), vals.end()) - vals.begin());
  out.argmax = pts[best];
  out.max = -vals[best];
  return out;
}

}  // namespace crossglmm
