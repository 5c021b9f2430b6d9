#include "crossglmm/identify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "strings.hpp"

namespace crossglmm {

using detail::format_double;

KlReport kl_subset(const Theta& theta, const Theta& theta0, SubsetKind kind, int order) {
  if (kind != SubsetKind::Diagonal && (!(theta.psi2() > 0.0) || !(theta0.psi2() > 0.0))) {
    throw std::invalid_argument("pair subsets need psi2 > 0");
  }
  const auto p = subset_element_masses(theta, kind, order);
  const auto q = subset_element_masses(theta0, kind, order);
  KlReport out{theta, theta0, kind, 0.0, true};
  for (std::size_t o = 0; o < q.size(); ++o) {
    if (std::abs(p[o] - q[o]) > 1e-10) out.identical = false;
    const double x = p[o] / q[o] - 1.0;
    out.kl -= q[o] * (x - std::log1p(x));
  }
  return out;
}

std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) throw std::invalid_argument("linspace needs at least one point");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out[std::size_t(k)] = n == 1 ? lo : lo + (hi - lo) * k / (n - 1);
  return out;
}

B2Report check_b2_grid(const Theta& theta0, double epsilon, double M, int density, int order) {
  if (!(theta0.sigma2 > 0.0) || !(theta0.tau2 > 0.0)) {
    throw std::domain_error("identification needs positive true variances");
  }
  if (epsilon > M) throw std::invalid_argument("empty grid: epsilon exceeds M");
  if (density < 2) throw std::invalid_argument("grid density must be at least 2");
  const auto offs = linspace(-M, M, density);
  B2Report out;
  double worst = -std::numeric_limits<double>::infinity();
  for (double a : offs) {
    for (double b : offs) {
      for (double c : offs) {
        const double dist = std::sqrt(a * a + b * b + c * c);
        if (dist < epsilon || dist > M) continue;
        const double s2 = theta0.sigma2 + b, t2 = theta0.tau2 + c;
        if (s2 < 0.0 || t2 < 0.0 || !(s2 + t2 > 0.0)) {
          ++out.skipped;
          continue;
        }
        const Theta theta(theta0.mu + a, s2, t2);
        B2Point pt{theta, kl_subset(theta, theta0, SubsetKind::ReplicatePairDiagonal, order).kl,
                   kl_subset(theta, theta0, SubsetKind::OffDiagonalPair, order).kl};
        if (pt.best() > worst) {
          worst = pt.best();
          out.worst = pt;
        }
        out.points.push_back(pt);
      }
    }
  }
  if (out.points.empty()) throw std::invalid_argument("empty grid: no valid points in the annulus");
  out.delta = 0.0 - worst;
  out.pass = out.delta > 0.0;
  return out;
}

InjectivityReport check_m_injective(const std::vector<double>& mu_grid,
                                    const std::vector<double>& psi2_grid, int order) {
  for (double v : psi2_grid) {
    if (!(v > 0.0)) throw std::invalid_argument("psi2 grid must be positive");
  }
  struct Pt {
    double mu, psi2, m1, m2;
  };
  std::vector<Pt> pts;
  for (double mu : mu_grid) {
    for (double psi2 : psi2_grid) {
      const MValues mv = m_function(mu, psi2, order);
      pts.push_back({mu, psi2, mv.m1, mv.m2});
    }
  }
  InjectivityReport out;
  out.points = static_cast<int>(pts.size());
  out.min_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < pts.size(); ++a) {
    for (std::size_t b = a + 1; b < pts.size(); ++b) {
      const double dx = std::hypot(pts[a].mu - pts[b].mu, pts[a].psi2 - pts[b].psi2);
      if (dx == 0.0) continue;
      const double r = std::hypot(pts[a].m1 - pts[b].m1, pts[a].m2 - pts[b].m2) / dx;
      if (r < out.min_ratio) {
        out.min_ratio = r;
        out.mu_a = pts[a].mu;
        out.psi2_a = pts[a].psi2;
        out.mu_b = pts[b].mu;
        out.psi2_b = pts[b].psi2;
      }
    }
  }
  out.vacuous = !std::isfinite(out.min_ratio);
  out.pass = out.vacuous || out.min_ratio > 0.0;
  return out;
}

SlepianReport check_slepian_monotone(double mu0, double psi2_0, const std::vector<double>& gamma_grid,
                                     int order) {
  for (std::size_t k = 0; k < gamma_grid.size(); ++k) {
    if (gamma_grid[k] < 0.0 || gamma_grid[k] > 1.0) throw std::invalid_argument("gamma grid must lie in [0, 1]");
    if (k > 0 && !(gamma_grid[k] > gamma_grid[k - 1])) throw std::invalid_argument("gamma grid must be sorted");
  }
  SlepianReport out;
  out.gammas = gamma_grid;
  for (double g : gamma_grid) out.values.push_back(p_gamma_11(g, mu0, psi2_0, order));
  out.vacuous = gamma_grid.size() < 2;
  out.min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < out.values.size(); ++k) {
    out.min_gap = std::min(out.min_gap, out.values[k] - out.values[k - 1]);
  }
  out.pass = out.vacuous || out.min_gap > kSlepianMargin;
  return out;
}

void write_b2_csv(std::ostream& out, const B2Report& report) {
  out << "mu,sigma2,tau2,kl_pair,kl_offdiag,pass\n";
  for (const auto& p : report.points) {
    out << format_double(p.theta.mu) << ',' << format_double(p.theta.sigma2) << ','
        << format_double(p.theta.tau2) << ',' << format_double(p.kl_pair) << ','
        << format_double(p.kl_offdiag) << ',' << (p.best() < 0.0 ? 1 : 0) << '\n';
  }
}

void write_slepian_csv(std::ostream& out, const SlepianReport& report) {
  out << "gamma,p11,pass\n";
  for (std::size_t k = 0; k < report.values.size(); ++k) {
    const bool ok = k == 0 || report.values[k] - report.values[k - 1] > kSlepianMargin;
    out << format_double(report.gammas[k]) << ',' << format_double(report.values[k], 15) << ','
        << (ok ? 1 : 0) << '\n';
  }
}

}  // namespace crossglmm
