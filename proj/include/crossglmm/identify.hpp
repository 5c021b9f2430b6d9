#pragma once

#include <algorithm>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crossglmm/likelihood.hpp"
#include "crossglmm/model.hpp"

namespace crossglmm {

/// E_theta0 log(p_theta(o) / p_theta0(o)) over one subset element.
struct KlReport {
  Theta theta;
  Theta theta0;
  SubsetKind kind = SubsetKind::Diagonal;
  double kl = 0.0;
  /// Outcome masses agree within 1e-10.
  bool identical = false;
};

/// Exact sum over the element's 2 or 4 outcomes, written as
/// -sum p0 (r - 1 - log r) with r = p_theta / p_theta0 (equal to the usual
/// form because both mass vectors sum to one), so the result is never positive.
KlReport kl_subset(const Theta& theta, const Theta& theta0, SubsetKind kind,
                   int order = kDefaultOrder);

struct B2Point {
  Theta theta;
  double kl_pair = 0.0;
  double kl_offdiag = 0.0;
  double best() const { return std::min(kl_pair, kl_offdiag); }
};

struct B2Report {
  std::vector<B2Point> points;
  int skipped = 0;  // invalid variances
  /// -max over the grid of min(kl_pair, kl_offdiag)
  double delta = 0.0;
  std::optional<B2Point> worst;
  bool pass = false;
};

/// Grid of theta0 + {-M, ..., M} per axis (`density` points each), keeping
/// points with epsilon <= |theta - theta0| <= M. Points with a negative
/// variance or psi2 = 0 are skipped. The per-element divergences do not
/// depend on the design size for these i.i.d. subsets, so one size suffices.
/// Passes when the worst point still has min KL < 0.
B2Report check_b2_grid(const Theta& theta0, double epsilon, double M, int density,
                       int order = kDefaultOrder);

struct InjectivityReport {
  double min_ratio = 0.0;  // min |M(a) - M(b)| / |a - b| over distinct grid pairs
  double mu_a = 0.0, psi2_a = 0.0, mu_b = 0.0, psi2_b = 0.0;
  int points = 0;
  bool vacuous = false;
  bool pass = false;
};

/// M(mu, psi2) = (E h, E h^2) on the product grid mu_grid x psi2_grid.
InjectivityReport check_m_injective(const std::vector<double>& mu_grid,
                                    const std::vector<double>& psi2_grid,
                                    int order = kDefaultOrder);

struct SlepianReport {
  std::vector<double> gammas;
  std::vector<double> values;  // p_gamma(1, 1)
  double min_gap = 0.0;
  bool vacuous = false;
  bool pass = false;
};

inline constexpr double kSlepianMargin = 1e-10;

SlepianReport check_slepian_monotone(double mu0, double psi2_0, const std::vector<double>& gamma_grid,
                                     int order = kDefaultOrder);

/// n evenly spaced points on [lo, hi]; n = 1 gives lo.
std::vector<double> linspace(double lo, double hi, int n);

void write_b2_csv(std::ostream& out, const B2Report& report);
void write_slepian_csv(std::ostream& out, const SlepianReport& report);

}  // namespace crossglmm
