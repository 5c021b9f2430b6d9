#include "crossglmm/likelihood.hpp"

#include <algorithm>
#include <cfloat>
#include <limits>
#include <numeric>
#include <random>

namespace crossglmm {

namespace {

// Connected component of the bipartite row/column graph, oriented so that the
// outer (tensor) factor is the smaller one.
struct Component {
  std::vector<int> outer_ids;  // original indices of the outer factor
  std::vector<int> inner_ids;
  bool outer_is_rows = true;
  Eigen::MatrixXd successes;  // outer x inner
  Eigen::MatrixXd counts;     // outer x inner
};

std::vector<Component> split_components(const CrossedDesign& design,
                                        const Eigen::MatrixXi* successes) {
  const int m = design.rows();
  const int n = design.cols();
  std::vector<int> parent(static_cast<std::size_t>(m + n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[std::size_t(x)] != x) {
      parent[std::size_t(x)] = parent[std::size_t(parent[std::size_t(x)])];
      x = parent[std::size_t(x)];
    }
    return x;
  };
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!design.contains(i, j)) continue;
      const int a = find(i), b = find(m + j);
      if (a != b) parent[std::size_t(std::max(a, b))] = std::min(a, b);
    }
  }
  std::vector<Component> comps;
  std::vector<int> slot(static_cast<std::size_t>(m + n), -1);
  std::vector<std::vector<int>> rows, cols;
  for (int i = 0; i < m; ++i) {
    const int r = find(i);
    if (slot[std::size_t(r)] < 0) {
      slot[std::size_t(r)] = static_cast<int>(rows.size());
      rows.emplace_back();
      cols.emplace_back();
    }
    rows[std::size_t(slot[std::size_t(r)])].push_back(i);
  }
  for (int j = 0; j < n; ++j) {
    cols[std::size_t(slot[std::size_t(find(m + j))])].push_back(j);
  }
  for (std::size_t c = 0; c < rows.size(); ++c) {
    Component comp;
    comp.outer_is_rows = rows[c].size() <= cols[c].size();
    comp.outer_ids = comp.outer_is_rows ? rows[c] : cols[c];
    comp.inner_ids = comp.outer_is_rows ? cols[c] : rows[c];
    const auto mo = static_cast<Eigen::Index>(comp.outer_ids.size());
    const auto ni = static_cast<Eigen::Index>(comp.inner_ids.size());
    comp.successes = Eigen::MatrixXd::Zero(mo, ni);
    comp.counts = Eigen::MatrixXd::Zero(mo, ni);
    for (Eigen::Index a = 0; a < mo; ++a) {
      for (Eigen::Index b = 0; b < ni; ++b) {
        const int i = comp.outer_is_rows ? comp.outer_ids[std::size_t(a)] : comp.inner_ids[std::size_t(b)];
        const int j = comp.outer_is_rows ? comp.inner_ids[std::size_t(b)] : comp.outer_ids[std::size_t(a)];
        comp.counts(a, b) = design.count(i, j);
        if (successes != nullptr) comp.successes(a, b) = (*successes)(i, j);
      }
    }
    comps.push_back(std::move(comp));
  }
  return comps;
}

struct LogSumExp {
  double max = -std::numeric_limits<double>::infinity();
  double sum = 0.0;

  void add(double v) {
    if (v == -std::numeric_limits<double>::infinity()) return;
    if (v > max) {
      sum = sum * std::exp(max - v) + 1.0;
      max = v;
    } else {
      sum += std::exp(v - max);
    }
  }
  double value() const {
    if (sum == 0.0) return -std::numeric_limits<double>::infinity();
    return max + std::log(sum);
  }
};

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

struct ScaledRule {
  Eigen::ArrayXd nodes;
  Eigen::ArrayXd weights;
  Eigen::ArrayXd log_weights;
};

ScaledRule scale_rule(const QuadratureRule& rule, double var) {
  ScaledRule out;
  if (var == 0.0) {
    out.nodes = Eigen::ArrayXd::Zero(1);
    out.weights = Eigen::ArrayXd::Ones(1);
  } else {
    out.nodes = std::sqrt(var) * rule.nodes.array();
    out.weights = rule.weights.array();
  }
  out.log_weights = out.weights.log();
  return out;
}

class ExactComponent {
 public:
  ExactComponent(const Component& comp, double mu, const ScaledRule& outer,
                 const ScaledRule& inner)
      : comp_(comp), outer_(outer), inner_(inner) {
    m_ = static_cast<int>(comp.outer_ids.size());
    n_ = static_cast<Eigen::Index>(comp.inner_ids.size());
    q_ = static_cast<int>(outer.nodes.size());
    t_ = inner.nodes.size();
    eta_.resize(std::size_t(q_));
    sp_.resize(std::size_t(q_));
    for (int a = 0; a < q_; ++a) {
      eta_[std::size_t(a)] = mu + outer.nodes[a] + inner.nodes;
      sp_[std::size_t(a)] = eta_[std::size_t(a)].unaryExpr([](double x) { return softplus(x); });
    }
    factors_.resize(std::size_t(m_) * std::size_t(q_));
    shifts_.resize(std::size_t(m_) * std::size_t(q_));
    for (int l = 0; l < m_; ++l) {
      for (int a = 0; a < q_; ++a) {
        Eigen::ArrayXXd g = log_terms(l, a);
        Eigen::ArrayXd shift = g.colwise().maxCoeff().transpose();
        for (Eigen::Index j = 0; j < n_; ++j) g.col(j) = (g.col(j) - shift[j]).exp();
        factors_[slot(l, a)] = std::move(g);
        shifts_[slot(l, a)] = std::move(shift);
      }
    }
    // Last level, regrouped per column as T x q so all outer nodes are
    // handled by one matrix-vector product.
    last_.resize(std::size_t(n_));
    for (Eigen::Index j = 0; j < n_; ++j) {
      last_[std::size_t(j)].resize(t_, q_);
      for (int a = 0; a < q_; ++a) {
        last_[std::size_t(j)].col(a) = factors_[slot(m_ - 1, a)].col(j).matrix();
      }
    }
    last_shift_.resize(q_);
    for (int a = 0; a < q_; ++a) {
      last_shift_[a] = outer_.log_weights[a] + shifts_[slot(m_ - 1, a)].sum();
    }
  }

  double evaluate(long long& evaluations) {
    idx_.assign(std::size_t(m_), 0);
    prod_.assign(std::size_t(m_) + 1, Eigen::ArrayXXd());
    shift_.assign(std::size_t(m_) + 1, Eigen::ArrayXd());
    logw_.assign(std::size_t(m_) + 1, 0.0);
    prod_[0] = inner_.weights.replicate(1, n_);
    shift_[0] = Eigen::ArrayXd::Zero(n_);
    acc_ = LogSumExp{};
    cols_.resize(q_, n_);
    recurse(0);
    evaluations += leaves_;
    return acc_.value();
  }

 private:
  std::size_t slot(int l, int a) const { return std::size_t(l) * std::size_t(q_) + std::size_t(a); }

  // g(t, j) = s_lj eta - c_lj softplus(eta) at outer node a for outer unit l.
  Eigen::ArrayXXd log_terms(int l, int a) const {
    Eigen::ArrayXXd g(t_, n_);
    for (Eigen::Index j = 0; j < n_; ++j) {
      const double s = comp_.successes(l, j);
      const double c = comp_.counts(l, j);
      g.col(j) = s * eta_[std::size_t(a)] - c * sp_[std::size_t(a)];
    }
    return g;
  }

  void recurse(int level) {
    const auto L = std::size_t(level);
    if (level == m_ - 1) {
      for (Eigen::Index j = 0; j < n_; ++j) {
        cols_.col(j).noalias() = last_[std::size_t(j)].transpose() * prod_[L].col(j).matrix();
      }
      const double base = logw_[L] + shift_[L].sum();
      for (int a = 0; a < q_; ++a) {
        const double p = cols_.row(a).prod();
        double leaf = base + last_shift_[a];
        if (p >= DBL_MIN) {
          leaf += std::log(p);
        } else {
          idx_[L] = a;
          const Eigen::ArrayXd& shift = shifts_[slot(level, a)];
          leaf -= shift.sum();
          for (Eigen::Index j = 0; j < n_; ++j) {
            const double cj = cols_(a, j);
            leaf += (cj >= DBL_MIN) ? std::log(cj) + shift_[L][j] + shift[j] : column_in_log_space(j);
          }
          leaf -= shift_[L].sum();
        }
        acc_.add(leaf);
      }
      leaves_ += q_;
      return;
    }
    for (int a = 0; a < q_; ++a) {
      idx_[L] = a;
      prod_[L + 1] = prod_[L] * factors_[slot(level, a)];
      shift_[L + 1] = shift_[L] + shifts_[slot(level, a)];
      logw_[L + 1] = logw_[L] + outer_.log_weights[a];
      recurse(level + 1);
    }
  }

  double column_in_log_space(Eigen::Index j) const {
    Eigen::ArrayXd g = inner_.log_weights;
    for (int l = 0; l < m_; ++l) {
      const int a = idx_[std::size_t(l)];
      g += comp_.successes(l, j) * eta_[std::size_t(a)] - comp_.counts(l, j) * sp_[std::size_t(a)];
    }
    const double mx = g.maxCoeff();
    return mx + std::log((g - mx).exp().sum());
  }

  const Component& comp_;
  const ScaledRule& outer_;
  const ScaledRule& inner_;
  int m_ = 0;
  Eigen::Index n_ = 0;
  int q_ = 0;
  Eigen::Index t_ = 0;
  std::vector<Eigen::ArrayXd> eta_, sp_;
  std::vector<Eigen::ArrayXXd> factors_;
  std::vector<Eigen::ArrayXd> shifts_;
  std::vector<Eigen::MatrixXd> last_;
  Eigen::VectorXd last_shift_;
  Eigen::MatrixXd cols_;
  std::vector<int> idx_;
  std::vector<Eigen::ArrayXXd> prod_;
  std::vector<Eigen::ArrayXd> shift_;
  std::vector<double> logw_;
  LogSumExp acc_;
  long long leaves_ = 0;
};

std::pair<double, double> component_variances(const Component& comp, const Theta& theta) {
  return comp.outer_is_rows ? std::make_pair(theta.sigma2, theta.tau2)
                            : std::make_pair(theta.tau2, theta.sigma2);
}

double bernoulli_log_mass(int y, double p_one, double p_zero) {
  return y == 1 ? std::log(p_one) : std::log(p_zero);
}

}  // namespace

LikelihoodValue marginal_loglik_exact(const ResponseTable& data, const Theta& theta, int order,
                                      double cap) {
  const QuadratureRule& rule = cached_gauss_hermite(order);
  const auto comps = split_components(data.design(), &data.successes());
  // Validate every component against the cap before doing any work.
  for (const auto& comp : comps) {
    const auto [var_outer, var_inner] = component_variances(comp, theta);
    (void)var_inner;
    if (var_outer > 0.0) tensor_size(static_cast<int>(comp.outer_ids.size()), order, cap);
  }
  LikelihoodValue out;
  out.method = LikelihoodMethod::ExactQuadrature;
  for (const auto& comp : comps) {
    const auto [var_outer, var_inner] = component_variances(comp, theta);
    const ScaledRule outer = scale_rule(rule, var_outer);
    const ScaledRule inner = scale_rule(rule, var_inner);
    ExactComponent exact(comp, theta.mu, outer, inner);
    out.loglik += exact.evaluate(out.evaluations);
  }
  return out;
}

bool exact_within_cap(const CrossedDesign& design, int order, double cap) {
  for (const auto& comp : split_components(design, nullptr)) {
    if (std::pow(double(order), double(comp.outer_ids.size())) > cap) return false;
  }
  return true;
}

McDraws::McDraws(const CrossedDesign& design, int draws, std::uint64_t seed) : draws_(draws) {
  if (draws < 100) throw std::invalid_argument("marginal_loglik_mc needs at least 100 draws");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& comp : split_components(design, nullptr)) {
    Eigen::MatrixXd z(draws, static_cast<Eigen::Index>(comp.outer_ids.size()));
    for (Eigen::Index k = 0; k < z.rows(); ++k) {
      for (Eigen::Index l = 0; l < z.cols(); ++l) z(k, l) = normal(gen);
    }
    blocks_.push_back(std::move(z));
  }
}

LikelihoodValue marginal_loglik_mc(const ResponseTable& data, const Theta& theta, int draws,
                                   std::uint64_t seed, int order, int shift_order) {
  return marginal_loglik_mc(data, theta, McDraws(data.design(), draws, seed), order, shift_order);
}

LikelihoodValue marginal_loglik_mc(const ResponseTable& data, const Theta& theta,
                                   const McDraws& draws, int order, int shift_order) {
  if (shift_order < 1) throw std::invalid_argument("shift_order must be positive");
  const QuadratureRule& rule = cached_gauss_hermite(order);
  const auto comps = split_components(data.design(), &data.successes());
  LikelihoodValue out;
  out.method = LikelihoodMethod::MonteCarlo;
  double var_sum = 0.0;
  for (std::size_t c = 0; c < comps.size(); ++c) {
    const auto& comp = comps[c];
    const Eigen::MatrixXd& z = draws.block(c);
    if (z.cols() != static_cast<Eigen::Index>(comp.outer_ids.size())) {
      throw std::invalid_argument("Monte-Carlo draws were generated for a different design");
    }
    const auto [var_outer, var_inner] = component_variances(comp, theta);
    const ScaledRule inner = scale_rule(rule, var_inner);
    const Eigen::Index m = z.cols();
    const Eigen::Index t = inner.nodes.size();
    const Eigen::Index n = comp.counts.cols();
    const double sd_outer = std::sqrt(var_outer);
    // Common shift ~ N(0, var_outer / m).
    const ScaledRule shift =
        scale_rule(cached_gauss_hermite(m == 1 ? order : shift_order), var_outer / double(m));

    Eigen::VectorXd values(draws.draws());
    Eigen::MatrixXd eta(t, m), sp(t, m), acc(t, n);
    Eigen::ArrayXd dev(m);
    for (Eigen::Index k = 0; k < z.rows(); ++k) {
      dev = sd_outer * (z.row(k).array() - z.row(k).mean()).transpose();
      LogSumExp per_draw;
      for (Eigen::Index r = 0; r < shift.nodes.size(); ++r) {
        for (Eigen::Index l = 0; l < m; ++l) {
          eta.col(l) = (theta.mu + shift.nodes[r] + dev[l] + inner.nodes).matrix();
          sp.col(l) = eta.col(l).unaryExpr([](double x) { return softplus(x); });
        }
        acc.noalias() = eta * comp.successes;
        acc.noalias() -= sp * comp.counts;
        double v = shift.log_weights[r];
        for (Eigen::Index j = 0; j < n; ++j) {
          const Eigen::ArrayXd g = acc.col(j).array() + inner.log_weights;
          const double mx = g.maxCoeff();
          v += mx + std::log((g - mx).exp().sum());
        }
        per_draw.add(v);
      }
      values[k] = per_draw.value();
    }
    const double mx = values.maxCoeff();
    const Eigen::ArrayXd w = (values.array() - mx).exp();
    const double mean = w.mean();
    const double d = static_cast<double>(w.size());
    const double var = (w - mean).square().sum() / (d - 1.0);
    out.loglik += mx + std::log(mean);
    var_sum += var / (d * mean * mean);
    out.evaluations += z.rows();
  }
  out.mc_std_error = std::sqrt(var_sum);
  return out;
}

double p0(double lambda, double psi2, int order) {
  if (psi2 < 0.0) throw std::invalid_argument("p0: psi2 must be non-negative");
  return expect_1d([](double x) { return logistic(x); }, lambda, psi2, cached_gauss_hermite(order));
}

LikelihoodValue subset_diag_loglik(const ResponseTable& data, const Theta& theta, int order) {
  const SubsetSpec diag = resolve_subset(data.design(), SubsetKind::Diagonal);
  if (diag.empty()) throw std::invalid_argument("diagonal subset is empty");
  const double p1 = p0(theta.mu, theta.psi2(), order);
  const double q1 = p0(-theta.mu, theta.psi2(), order);  // 1 - p0 without cancellation
  LikelihoodValue out;
  for (const auto& e : diag.elements) out.loglik += bernoulli_log_mass(data.at(e[0]), p1, q1);
  out.evaluations = 2 * order;
  return out;
}

std::array<double, 3> replicate_pair_masses(double mu, double psi2, int order) {
  const QuadratureRule& rule = cached_gauss_hermite(order);
  std::array<double, 3> masses{};
  for (int s = 0; s <= 2; ++s) {
    masses[std::size_t(s)] = expect_1d(
        [s](double x) { return std::exp(s * log_logistic(x) + (2 - s) * log_logistic(-x)); },
        mu, psi2, rule);
  }
  return masses;
}

LikelihoodValue subset_pair_loglik(const ResponseTable& data, const Theta& theta, int order) {
  const SubsetSpec pairs = resolve_subset(data.design(), SubsetKind::ReplicatePairDiagonal);
  if (pairs.empty()) throw std::invalid_argument("replicate-pair subset is empty");
  const auto masses = replicate_pair_masses(theta.mu, theta.psi2(), order);
  LikelihoodValue out;
  for (const auto& e : pairs.elements) {
    out.loglik += std::log(masses[std::size_t(data.at(e[0]) + data.at(e[1]))]);
  }
  out.evaluations = 3 * order;
  return out;
}

MValues m_function(double mu, double psi2, int order) {
  if (!(psi2 > 0.0)) throw std::invalid_argument("m_function: psi2 must be positive");
  const QuadratureRule& rule = cached_gauss_hermite(order);
  const double m1 = expect_1d([](double x) { return logistic(x); }, mu, psi2, rule);
  const double m2 = expect_1d(
      [](double x) {
        const double h = logistic(x);
        return h * h;
      },
      mu, psi2, rule);
  return {m1, m2};
}

Eigen::Matrix2d offdiag_pair_masses(const Theta& theta, int order) {
  const double psi2 = theta.psi2();
  if (!(psi2 > 0.0)) throw std::invalid_argument("off-diagonal pair masses need psi2 > 0");
  const double gamma = theta.gamma();
  const QuadratureRule& rule = cached_gauss_hermite(order);
  Eigen::Matrix2d masses;
  for (int a = 0; a <= 1; ++a) {
    for (int b = 0; b <= 1; ++b) {
      masses(a, b) = expect_bivariate(
          [&](double x, double y) {
            const double fx = a == 1 ? logistic(theta.mu + x) : logistic(-(theta.mu + x));
            const double fy = b == 1 ? logistic(theta.mu + y) : logistic(-(theta.mu + y));
            return fx * fy;
          },
          psi2, gamma, rule);
    }
  }
  return masses;
}

LikelihoodValue offdiag_pair_loglik(const ResponseTable& data, const Theta& theta, int order) {
  const SubsetSpec pairs = resolve_subset(data.design(), SubsetKind::OffDiagonalPair);
  if (pairs.empty()) throw std::invalid_argument("off-diagonal pair subset is empty");
  const Eigen::Matrix2d masses = offdiag_pair_masses(theta, order);
  LikelihoodValue out;
  for (const auto& e : pairs.elements) out.loglik += std::log(masses(data.at(e[0]), data.at(e[1])));
  out.evaluations = 4LL * order * order;
  return out;
}

double p_gamma_11(double gamma, double mu0, double psi2_0, int order) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("p_gamma_11: gamma outside [0, 1]");
  if (!(psi2_0 > 0.0)) throw std::invalid_argument("p_gamma_11: psi2 must be positive");
  return expect_bivariate([&](double x, double y) { return logistic(mu0 + x) * logistic(mu0 + y); },
                          psi2_0, gamma, cached_gauss_hermite(order));
}

std::vector<double> subset_element_masses(const Theta& theta, SubsetKind kind, int order) {
  switch (kind) {
    case SubsetKind::Diagonal:
      return {p0(-theta.mu, theta.psi2(), order), p0(theta.mu, theta.psi2(), order)};
    case SubsetKind::ReplicatePairDiagonal: {
      const auto r = replicate_pair_masses(theta.mu, theta.psi2(), order);
      return {r[0], r[1], r[1], r[2]};
    }
    case SubsetKind::OffDiagonalPair: {
      const Eigen::Matrix2d q = offdiag_pair_masses(theta, order);
      return {q(0, 0), q(1, 0), q(0, 1), q(1, 1)};
    }
    case SubsetKind::Explicit:
      break;
  }
  throw std::invalid_argument("element masses are defined for diagonal and pair subsets only");
}

void require_interior(const Theta& theta, double step) {
  const Eigen::VectorXd w = to_working(theta);
  const Eigen::VectorXd lo = working_lower(theta);
  const Eigen::VectorXd hi = working_upper(theta);
  for (Eigen::Index a = 0; a < w.size(); ++a) {
    if (!(w[a] - step >= lo[a] && w[a] + step <= hi[a])) {
      throw std::domain_error("theta is not interior to the parameter box by the step size");
    }
  }
}

Eigen::VectorXd loglik_gradient_fd(const ResponseTable& data, const Theta& theta, double step,
                                   int order) {
  return fd_gradient(
      [&](const Theta& t) { return marginal_loglik_exact(data, t, order).loglik; }, theta, step);
}

}  // namespace crossglmm
