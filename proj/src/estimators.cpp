#include "crossglmm/estimators.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "crossglmm/information.hpp"
#include "crossglmm/optimize.hpp"

namespace crossglmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class Objective {
 public:
  Objective(const ResponseTable& data, const LikelihoodOptions& options)
      : data_(data), options_(options) {
    if (options.method == LikelihoodMethod::MonteCarlo) {
      draws_.emplace(data.design(), options.mc_draws, options.mc_seed);
    } else if (!exact_within_cap(data.design(), options.order)) {
      throw QuadratureCapError("design too large for exact quadrature at order " +
                               std::to_string(options.order));
    }
  }

  LikelihoodValue operator()(const Theta& theta) {
    ++calls_;
    if (draws_) return marginal_loglik_mc(data_, theta, *draws_, options_.order, options_.shift_order);
    return marginal_loglik_exact(data_, theta, options_.order);
  }

  long long calls() const { return calls_; }
  FitMethod method() const {
    return draws_ ? FitMethod::MonteCarlo : FitMethod::Quadrature;
  }

 private:
  const ResponseTable& data_;
  LikelihoodOptions options_;
  std::optional<McDraws> draws_;
  long long calls_ = 0;
};

Theta clamp_to_box(Theta theta) {
  for (Param p : theta.free_params()) {
    const double lo = p == Param::Mu ? kMuLower : kVarLower;
    const double hi = p == Param::Mu ? kMuUpper : kVarUpper;
    theta.set(p, std::clamp(theta.get(p), lo, hi));
  }
  return theta;
}

bool near_bounds(const Eigen::VectorXd& w, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                 double tol) {
  return ((w - lo).array() <= tol).any() || ((hi - w).array() <= tol).any();
}

FitResult fit_subset_diagonal(const ResponseTable& data, const Theta& model, int order) {
  const SubsetSpec diag = resolve_subset(data.design(), SubsetKind::Diagonal);
  if (diag.empty()) throw std::invalid_argument("diagonal subset is empty");
  double ybar = 0.0;
  for (const auto& e : diag.elements) ybar += data.at(e[0]);
  ybar /= double(diag.size());
  if (ybar <= 0.0 || ybar >= 1.0) throw SubsetMleDiverges();

  const double psi2 = model.psi2();
  FitResult out;
  out.method = FitMethod::SubsetDiagonal;
  auto g = [&](double mu) {
    ++out.evaluations;
    return p0(mu, psi2, order) - ybar;
  };
  double lo = kMuLower, hi = kMuUpper, mu = 0.0;
  if (g(lo) >= 0.0) {
    mu = lo;
    out.at_boundary = true;
  } else if (g(hi) <= 0.0) {
    mu = hi;
    out.at_boundary = true;
  } else {
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
      const double mid = 0.5 * (lo + hi);
      (g(mid) < 0.0 ? lo : hi) = mid;
    }
    mu = 0.5 * (lo + hi);
  }
  out.theta_hat = model;
  out.theta_hat.mu = mu;
  out.loglik = subset_diag_loglik(data, out.theta_hat, order).loglik;
  out.converged = true;
  return out;
}

FitResult fit_subset_pairs(const ResponseTable& data, const Theta& model, int order) {
  const SubsetSpec pairs = resolve_subset(data.design(), SubsetKind::ReplicatePairDiagonal);
  const SubsetSpec offdiag = resolve_subset(data.design(), SubsetKind::OffDiagonalPair);
  if (pairs.empty()) throw std::invalid_argument("replicate-pair subset is empty");
  if (offdiag.empty()) throw std::invalid_argument("off-diagonal pair subset is empty");

  FitResult out;
  out.method = FitMethod::SubsetPairs;
  auto at = [&](double mu, double psi2, double gamma) {
    return Theta(mu, gamma * psi2, (1.0 - gamma) * psi2, model.free);
  };

  // Stage 1: (mu, log psi2).
  double ybar = 0.0;
  for (int idx : pairs.indices()) ybar += data.at(idx);
  ybar /= double(2 * pairs.size());
  const double mu_start =
      (ybar > 0.0 && ybar < 1.0) ? std::clamp(logit(ybar), -5.0, 5.0) : (ybar > 0.5 ? 5.0 : -5.0);
  SimplexOptions so;
  so.tol = 1e-7;
  so.lower = Eigen::Vector2d(kMuLower, std::log(2.0 * kVarLower));
  so.upper = Eigen::Vector2d(kMuUpper, std::log(2.0 * kVarUpper));
  auto stage1 = [&](const Eigen::VectorXd& w) {
    return subset_pair_loglik(data, at(w[0], std::exp(w[1]), 0.5), order).loglik;
  };
  const SimplexOptimum s1 =
      optimize_simplex(stage1, Eigen::Vector2d(mu_start, 0.0), Eigen::Vector2d(0.5, 0.5), so);
  const double mu = s1.argmax[0];
  const double psi2 = std::exp(s1.argmax[1]);

  // Stage 2: gamma, keeping both variances inside the box.
  const double g_lo = std::max(kVarLower / psi2, 1.0 - kVarUpper / psi2);
  const double g_hi = std::min(1.0 - kVarLower / psi2, kVarUpper / psi2);
  auto stage2 = [&](double gamma) { return offdiag_pair_loglik(data, at(mu, psi2, gamma), order).loglik; };
  const ScalarOptimum s2 = optimize_scalar(stage2, g_lo, g_hi, 1e-8);

  out.theta_hat = at(mu, psi2, s2.argmax);
  out.loglik = subset_pair_loglik(data, out.theta_hat, order).loglik +
               offdiag_pair_loglik(data, out.theta_hat, order).loglik;
  out.converged = s1.converged;
  out.evaluations = s1.evaluations + s2.evaluations;
  out.at_boundary = near_bounds(s1.argmax, so.lower, so.upper, 1e-4) ||
                    s2.argmax - g_lo <= 1e-6 || g_hi - s2.argmax <= 1e-6;
  return out;
}

}  // namespace

std::string fit_method_name(FitMethod method) {
  switch (method) {
    case FitMethod::SubsetDiagonal: return "subset_diagonal";
    case FitMethod::SubsetPairs: return "subset_pairs";
    case FitMethod::Quadrature: return "quadrature";
    case FitMethod::MonteCarlo: return "mc";
    case FitMethod::FiniteGrid: return "finite_grid";
  }
  return "?";
}

FitResult fit_subset_mle(const ResponseTable& data, const Theta& model, int order) {
  const FreeMask f = model.free;
  if (f.mu && !f.sigma2 && !f.tau2) return fit_subset_diagonal(data, model, order);
  if (f.mu && f.sigma2 && f.tau2) return fit_subset_pairs(data, model, order);
  throw std::invalid_argument("subset MLE supports mu only or all three parameters free");
}

FitResult fit_full_mle(const ResponseTable& data, const Theta& theta_init,
                       const FullFitOptions& options) {
  if (theta_init.free.count() == 0) throw std::invalid_argument("no free parameters to fit");
  Theta init = theta_init;
  if (options.init_from_subset) {
    try {
      init = fit_subset_mle(data, theta_init, options.likelihood.order).theta_hat;
    } catch (const std::exception&) {
      // Diverging or unavailable subset fit: keep theta_init.
    }
  }
  init = clamp_to_box(init);

  Objective objective(data, options.likelihood);
  FitResult out;
  out.method = objective.method();
  const double init_ll = objective(init).loglik;

  if (theta_init.free.count() == 1 && theta_init.free.mu) {
    auto f = [&](double mu) {
      Theta t = init;
      t.mu = mu;
      return objective(t).loglik;
    };
    double w = options.mu_bracket;
    double lo = std::max(kMuLower, init.mu - w), hi = std::min(kMuUpper, init.mu + w);
    ScalarOptimum best;
    for (int round = 0; round < 32; ++round) {
      best = optimize_scalar(f, lo, hi, options.tol);
      const bool at_lo = best.argmax <= lo + options.tol && lo > kMuLower;
      const bool at_hi = best.argmax >= hi - options.tol && hi < kMuUpper;
      if (!at_lo && !at_hi) {
        out.converged = true;
        break;
      }
      w *= 2.0;
      if (at_hi) {
        lo = best.argmax - options.tol;
        hi = std::min(kMuUpper, best.argmax + w);
      } else {
        hi = best.argmax + options.tol;
        lo = std::max(kMuLower, best.argmax - w);
      }
    }
    out.theta_hat = init;
    out.theta_hat.mu = best.argmax;
    out.loglik = best.max;
    out.at_boundary = best.argmax - kMuLower <= options.tol || kMuUpper - best.argmax <= options.tol;
  } else {
    SimplexOptions so;
    so.tol = options.tol;
    so.max_iter = options.max_iter;
    so.lower = working_lower(init);
    so.upper = working_upper(init);
    auto f = [&](const Eigen::VectorXd& w) { return objective(from_working(init, w)).loglik; };
    const Eigen::VectorXd start = to_working(init);
    const SimplexOptimum s = optimize_simplex(f, start, Eigen::VectorXd::Constant(start.size(), 0.5), so);
    out.theta_hat = from_working(init, s.argmax);
    out.loglik = s.max;
    out.converged = s.converged;
    out.at_boundary = near_bounds(s.argmax, so.lower, so.upper, 1e-4);
  }
  if (out.loglik < init_ll) {
    out.theta_hat = init;
    out.loglik = init_ll;
  }
  const LikelihoodValue final_value = objective(out.theta_hat);
  out.loglik = final_value.loglik;
  out.mc_std_error = final_value.mc_std_error;
  out.evaluations = objective.calls();
  return out;
}

FitResult fit_finite_mle(const ResponseTable& data, const std::vector<Theta>& grid,
                         const LikelihoodOptions& options) {
  if (grid.empty()) throw std::invalid_argument("finite grid is empty");
  Objective objective(data, options);
  FitResult out;
  out.method = FitMethod::FiniteGrid;
  out.loglik = kNegInf;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const LikelihoodValue v = objective(grid[g]);
    out.grid_loglik.push_back(v.loglik);
    if (v.loglik > out.loglik || out.grid_index < 0) {
      out.loglik = v.loglik;
      out.theta_hat = grid[g];
      out.grid_index = static_cast<int>(g);
      out.mc_std_error = v.mc_std_error;
    }
  }
  out.converged = true;
  out.evaluations = objective.calls();
  return out;
}

std::pair<Theta, Eigen::VectorXd> default_dc_prior(const ResponseTable& data, const Theta& model,
                                                   int order) {
  const FitResult subset = fit_subset_mle(data, model, order);
  const Theta& centre = subset.theta_hat;
  Eigen::MatrixXd info;
  if (subset.method == FitMethod::SubsetDiagonal) {
    info = subset_fisher_info(centre, SubsetKind::Diagonal,
                              resolve_subset(data.design(), SubsetKind::Diagonal).size(), order);
  } else {
    info = subset_fisher_info(centre, SubsetKind::ReplicatePairDiagonal,
                              resolve_subset(data.design(), SubsetKind::ReplicatePairDiagonal).size(),
                              order) +
           subset_fisher_info(centre, SubsetKind::OffDiagonalPair,
                              resolve_subset(data.design(), SubsetKind::OffDiagonalPair).size(), order);
  }
  // Natural to working scale: I_w = J I J.
  const Eigen::VectorXd jac = working_jacobian(centre);
  const Eigen::MatrixXd info_w = jac.asDiagonal() * info * jac.asDiagonal();
  const Eigen::Index d = info_w.rows();
  Eigen::VectorXd sd = Eigen::VectorXd::Ones(d);
  Eigen::LLT<Eigen::MatrixXd> llt(info_w);
  if (llt.info() == Eigen::Success) {
    const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
    for (Eigen::Index a = 0; a < d; ++a) {
      if (std::isfinite(cov(a, a)) && cov(a, a) > 0.0) sd[a] = std::sqrt(cov(a, a));
    }
  }
  return {centre, sd};
}

namespace {

double effective_sample_size(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  const Eigen::VectorXd c = x.array() - x.mean();
  const double var = c.squaredNorm() / double(n);
  if (!(var > 0.0)) return double(n);
  double sum = 0.0;
  for (Eigen::Index lag = 1; lag < n / 2; ++lag) {
    const double rho = c.head(n - lag).dot(c.tail(n - lag)) / (double(n) * var);
    if (rho < 0.05) break;
    sum += rho;
  }
  return double(n) / (1.0 + 2.0 * sum);
}

}  // namespace

DcResult fit_dc_mle(const ResponseTable& data, const Theta& model, const CloneConfig& cfg) {
  if (cfg.K < 1) throw std::invalid_argument("K must be at least 1");
  if (cfg.B < 100) throw std::invalid_argument("B must be at least 100");
  if (cfg.burn_in < 0) throw std::invalid_argument("burn_in must be non-negative");
  if (model.free.count() == 0) throw std::invalid_argument("no free parameters to sample");
  if (!exact_within_cap(data.design(), cfg.order)) {
    throw QuadratureCapError("data cloning needs a design within the exact quadrature cap");
  }

  DcResult out;
  if (cfg.prior_mean && cfg.prior_sd.size() > 0) {
    out.prior_mean = *cfg.prior_mean;
    out.prior_sd = cfg.prior_sd;
  } else {
    auto [centre, sd] = default_dc_prior(data, model, cfg.order);
    out.prior_mean = cfg.prior_mean.value_or(centre);
    out.prior_sd = cfg.prior_sd.size() > 0 ? cfg.prior_sd : sd;
  }
  out.prior_mean.free = model.free;
  out.prior_mean = clamp_to_box(out.prior_mean);
  const Eigen::VectorXd m0 = to_working(out.prior_mean);
  const Eigen::Index d = m0.size();
  if (out.prior_sd.size() != d || (out.prior_sd.array() <= 0.0).any()) {
    throw std::invalid_argument("prior_sd must have one positive entry per free parameter");
  }
  Eigen::VectorXd step = cfg.proposal_sd.size() > 0 ? cfg.proposal_sd
                                                    : Eigen::VectorXd(2.4 / std::sqrt(double(d)) * out.prior_sd);
  if (step.size() != d || (step.array() < 0.0).any()) {
    throw std::invalid_argument("proposal_sd must have one non-negative entry per free parameter");
  }

  const Eigen::VectorXd lo = working_lower(out.prior_mean);
  const Eigen::VectorXd hi = working_upper(out.prior_mean);
  auto log_target = [&](const Eigen::VectorXd& w) {
    if ((w.array() < lo.array()).any() || (w.array() > hi.array()).any()) return kNegInf;
    const double ll = marginal_loglik_exact(data, from_working(out.prior_mean, w), cfg.order).loglik;
    const double prior = -0.5 * ((w - m0).array() / out.prior_sd.array()).square().sum();
    return double(cfg.K) * ll + prior;
  };

  std::mt19937_64 gen(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd cur = m0;
  double cur_lp = log_target(cur);
  Eigen::MatrixXd draws(cfg.B, d);
  long long accepted_burn = 0, accepted = 0;
  const int half = cfg.burn_in / 2;
  const int total = cfg.burn_in + cfg.B;
  for (int it = 0; it < total; ++it) {
    if (cfg.adapt && it == half && half > 0) {
      const double rate = double(accepted_burn) / double(half);
      if (rate < 0.2 || rate > 0.4) {
        // Random-walk acceptance scales roughly like step^-d for large steps.
        const double r = std::max(rate, 1.0 / double(half)) / 0.3;
        step *= std::pow(r, 1.0 / double(d));
      }
    }
    Eigen::VectorXd prop(d);
    for (Eigen::Index a = 0; a < d; ++a) prop[a] = cur[a] + step[a] * normal(gen);
    const double prop_lp = log_target(prop);
    const double u = unif(gen);
    if (std::log(u) < prop_lp - cur_lp) {
      cur = prop;
      cur_lp = prop_lp;
      if (it < half) ++accepted_burn;
      if (it >= cfg.burn_in) ++accepted;
    }
    if (it >= cfg.burn_in) {
      draws.row(it - cfg.burn_in) = free_values(from_working(out.prior_mean, cur)).transpose();
    }
  }

  const Eigen::VectorXd mean = draws.colwise().mean().transpose();
  const Eigen::MatrixXd centred = draws.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centred.transpose() * centred / double(cfg.B - 1);
  out.scaled_cov = double(cfg.K) * 0.5 * (cov + cov.transpose());
  out.posterior_mean = out.prior_mean;
  const auto params = out.prior_mean.free_params();
  for (std::size_t a = 0; a < params.size(); ++a) {
    out.posterior_mean.set(params[a], mean[Eigen::Index(a)]);
    out.chain_summary.push_back({param_name(params[a]), mean[Eigen::Index(a)],
                                 std::sqrt(cov(Eigen::Index(a), Eigen::Index(a))),
                                 effective_sample_size(draws.col(Eigen::Index(a)))});
  }
  out.acceptance_rate = double(accepted) / double(cfg.B);
  out.acceptance_warning = out.acceptance_rate <= 0.05 || out.acceptance_rate >= 0.7;
  out.proposal_sd = step;
  return out;
}

}  // namespace crossglmm
