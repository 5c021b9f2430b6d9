#include "crossglmm/information.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

#include "strings.hpp"

namespace crossglmm {

namespace {

// Maps every outcome to a representative whose mass is computed.
class Enumerator {
 public:
  Enumerator(const CrossedDesign& design, const EnumerationOptions& options)
      : design_(design), options_(options) {
    const int n = design.total();
    if (n > options.cap || n > 30) {
      throw std::invalid_argument("enumeration needs N <= " + std::to_string(options.cap) +
                                  " but the design has " + std::to_string(n) + " observations");
    }
    size_ = std::size_t{1} << n;
    if (options.symmetry) {
      if (!design.is_full_crossing()) {
        throw std::invalid_argument("symmetric enumeration needs a full crossing with one replicate");
      }
      build_orbits();
    } else {
      rep_of_.resize(size_);
      std::iota(rep_of_.begin(), rep_of_.end(), 0u);
      reps_ = rep_of_;
    }
    slot_.assign(size_, 0);
    for (std::size_t r = 0; r < reps_.size(); ++r) slot_[reps_[r]] = static_cast<std::uint32_t>(r);
  }

  std::size_t orbit_count() const { return reps_.size(); }

  std::size_t size() const { return size_; }

  std::vector<double> log_masses(const Theta& theta) const {
    std::vector<double> rep_values(reps_.size());
    for (std::size_t r = 0; r < reps_.size(); ++r) {
      rep_values[r] =
          marginal_loglik_exact(table_from_bits(design_, reps_[r]), theta, options_.order).loglik;
    }
    std::vector<double> out(size_);
    for (std::size_t b = 0; b < size_; ++b) out[b] = rep_values[slot_[rep_of_[b]]];
    return out;
  }

 private:
  void build_orbits() {
    const int m = design_.rows(), n = design_.cols();
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::vector<int>> perms;
    do perms.push_back(perm);
    while (std::next_permutation(perm.begin(), perm.end()));

    std::unordered_map<std::uint64_t, std::uint32_t> first;
    rep_of_.resize(size_);
    std::vector<std::uint64_t> cols(static_cast<std::size_t>(n));
    for (std::size_t b = 0; b < size_; ++b) {
      std::uint64_t best = ~std::uint64_t{0};
      for (const auto& p : perms) {
        for (int j = 0; j < n; ++j) {
          std::uint64_t c = 0;
          for (int i = 0; i < m; ++i) c |= ((b >> (i * n + j)) & 1u) << p[std::size_t(i)];
          cols[std::size_t(j)] = c;
        }
        std::sort(cols.begin(), cols.end());
        std::uint64_t key = 0;
        for (int j = 0; j < n; ++j) key |= cols[std::size_t(j)] << (j * m);
        best = std::min(best, key);
      }
      const auto [it, inserted] = first.emplace(best, static_cast<std::uint32_t>(b));
      if (inserted) reps_.push_back(static_cast<std::uint32_t>(b));
      rep_of_[b] = it->second;
    }
  }

  const CrossedDesign& design_;
  EnumerationOptions options_;
  std::size_t size_ = 0;
  std::vector<std::uint32_t> rep_of_;
  std::vector<std::uint32_t> reps_;
  std::vector<std::uint32_t> slot_;
};

// Compact key of the subset responses of outcome b.
std::uint64_t subset_key(std::uint64_t b, const std::vector<int>& idx) {
  std::uint64_t key = 0;
  for (std::size_t e = 0; e < idx.size(); ++e) key |= ((b >> idx[e]) & 1u) << e;
  return key;
}

std::vector<double> marginal_log(const std::vector<double>& log_probs, const std::vector<int>& idx) {
  std::vector<double> mass(std::size_t{1} << idx.size(), 0.0);
  for (std::size_t b = 0; b < log_probs.size(); ++b) mass[subset_key(b, idx)] += std::exp(log_probs[b]);
  for (double& v : mass) v = std::log(v);
  return mass;
}

struct Scores {
  std::vector<double> log_probs;      // full data at theta
  std::vector<Eigen::VectorXd> full;  // per outcome
};

// Central differences on the working scale, converted to the natural scale.
template <typename LogFn>
std::vector<Eigen::VectorXd> fd_scores(const LogFn& log_fn, const Theta& theta, double step,
                                       std::size_t count) {
  require_interior(theta, step);
  const Eigen::VectorXd w = to_working(theta);
  const Eigen::VectorXd jac = working_jacobian(theta);
  std::vector<Eigen::VectorXd> out(count, Eigen::VectorXd::Zero(w.size()));
  for (Eigen::Index a = 0; a < w.size(); ++a) {
    Eigen::VectorXd up = w, down = w;
    up[a] += step;
    down[a] -= step;
    const std::vector<double> lu = log_fn(from_working(theta, up));
    const std::vector<double> ld = log_fn(from_working(theta, down));
    for (std::size_t b = 0; b < count; ++b) out[b][a] = (lu[b] - ld[b]) / (2.0 * step) / jac[a];
  }
  return out;
}

}  // namespace

EnumeratedModel enumerate_model(const CrossedDesign& design, const Theta& theta,
                                const EnumerationOptions& options) {
  const Enumerator e(design, options);
  EnumeratedModel out{design, theta, e.log_masses(theta), {}};
  out.probs.resize(out.log_probs.size());
  std::transform(out.log_probs.begin(), out.log_probs.end(), out.probs.begin(),
                 [](double v) { return std::exp(v); });
  return out;
}

Eigen::MatrixXd fisher_info(const CrossedDesign& design, const Theta& theta,
                            const std::optional<SubsetSpec>& subset,
                            const EnumerationOptions& options, double step) {
  const Enumerator e(design, options);
  const int d = theta.free.count();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
  if (!subset) {
    const auto lp = e.log_masses(theta);
    const auto scores = fd_scores([&](const Theta& t) { return e.log_masses(t); }, theta, step, lp.size());
    for (std::size_t b = 0; b < lp.size(); ++b) info += std::exp(lp[b]) * scores[b] * scores[b].transpose();
    return info;
  }
  const auto idx = subset->indices();
  auto log_fn = [&](const Theta& t) { return marginal_log(e.log_masses(t), idx); };
  const auto lp = log_fn(theta);
  const auto scores = fd_scores(log_fn, theta, step, lp.size());
  for (std::size_t k = 0; k < lp.size(); ++k) info += std::exp(lp[k]) * scores[k] * scores[k].transpose();
  return info;
}

InfoMatrices info_loss(const CrossedDesign& design, const Theta& theta, const SubsetSpec& subset,
                       const EnumerationOptions& options, double step) {
  const Enumerator e(design, options);
  const int d = theta.free.count();
  const auto idx = subset.indices();
  const std::size_t groups = std::size_t{1} << idx.size();

  const auto lp = e.log_masses(theta);
  const auto full = fd_scores([&](const Theta& t) { return e.log_masses(t); }, theta, step, lp.size());
  const auto lp1 = marginal_log(lp, idx);
  const auto sub = fd_scores([&](const Theta& t) { return marginal_log(e.log_masses(t), idx); },
                             theta, step, groups);

  InfoMatrices out;
  out.i_full = Eigen::MatrixXd::Zero(d, d);
  out.i_subset = Eigen::MatrixXd::Zero(d, d);
  out.loss = Eigen::MatrixXd::Zero(d, d);
  std::vector<Eigen::VectorXd> cond_mean(groups, Eigen::VectorXd::Zero(d));
  for (std::size_t b = 0; b < lp.size(); ++b) {
    const double p = std::exp(lp[b]);
    out.i_full += p * full[b] * full[b].transpose();
    cond_mean[subset_key(b, idx)] += p * full[b];
  }
  for (std::size_t k = 0; k < groups; ++k) {
    const double p1 = std::exp(lp1[k]);
    out.i_subset += p1 * sub[k] * sub[k].transpose();
    cond_mean[k] /= p1;
  }
  for (std::size_t b = 0; b < lp.size(); ++b) {
    const Eigen::VectorXd r = full[b] - cond_mean[subset_key(b, idx)];
    out.loss += std::exp(lp[b]) * r * r.transpose();
  }
  out.identity_residual = (out.i_full - out.i_subset - out.loss).cwiseAbs().maxCoeff();
  out.identity_holds = out.identity_residual < kIdentityTol;
  return out;
}

Eigen::MatrixXd subset_fisher_info(const Theta& theta, SubsetKind kind, int count, int order,
                                   double step) {
  auto log_fn = [&](const Theta& t) {
    auto masses = subset_element_masses(t, kind, order);
    for (double& v : masses) v = std::log(v);
    return masses;
  };
  const auto lp = log_fn(theta);
  const auto scores = fd_scores(log_fn, theta, step, lp.size());
  const int d = theta.free.count();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t o = 0; o < lp.size(); ++o) info += std::exp(lp[o]) * scores[o] * scores[o].transpose();
  return double(count) * info;
}

InequalityReport check_subset_inequality(const CrossedDesign& design, const Theta& theta0,
                                         const Theta& theta, const SubsetSpec& subset,
                                         const LambdaFn& lambda,
                                         const EnumerationOptions& options) {
  const Enumerator e(design, options);
  const auto idx = subset.indices();
  const std::size_t groups = std::size_t{1} << idx.size();
  const auto lp0 = e.log_masses(theta0);
  const auto lp = e.log_masses(theta);
  const auto lp1_0 = marginal_log(lp0, idx);
  const auto lp1 = marginal_log(lp, idx);

  std::vector<double> event(groups, 0.0);
  std::vector<double> lambdas(groups);
  std::vector<std::vector<std::uint8_t>> patterns(groups);
  for (std::size_t k = 0; k < groups; ++k) {
    patterns[k].resize(idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a) patterns[k][a] = static_cast<std::uint8_t>((k >> a) & 1u);
    lambdas[k] = lambda(patterns[k]);
    if (!(lambdas[k] > 0.0)) throw std::invalid_argument("lambda must be positive");
  }
  for (std::size_t b = 0; b < lp0.size(); ++b) {
    const std::size_t k = subset_key(b, idx);
    if (lp0[b] <= std::log(lambdas[k]) + lp[b]) event[k] += std::exp(lp0[b]);
  }
  InequalityReport out;
  out.max_violation = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < groups; ++k) {
    InequalityRow row;
    for (auto v : patterns[k]) row.y1_pattern += char('0' + v);
    row.lhs = event[k] / std::exp(lp1_0[k]);
    row.rhs = lambdas[k] * std::exp(lp1[k] - lp1_0[k]);
    row.slack = row.rhs - row.lhs;
    out.max_violation = std::max(out.max_violation, -row.slack);
    out.rows.push_back(row);
  }
  out.pass = out.max_violation <= kInequalityTol;
  return out;
}

void write_inequality_csv(std::ostream& out, const InequalityReport& report) {
  out << "y1_pattern,lhs,rhs,slack\n";
  for (const auto& r : report.rows) {
    out << r.y1_pattern << ',' << detail::format_double(r.lhs, 15) << ','
        << detail::format_double(r.rhs, 15) << ',' << detail::format_double(r.slack, 15) << '\n';
  }
}

}  // namespace crossglmm
