#include "crossglmm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <thread>

#include "crossglmm/likelihood.hpp"
#include "strings.hpp"

namespace crossglmm {

using detail::format_double;

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, int m, int n, int rep) {
  std::uint64_t s = splitmix64(base);
  s = splitmix64(s ^ static_cast<std::uint64_t>(m));
  s = splitmix64(s ^ static_cast<std::uint64_t>(n));
  return splitmix64(s ^ static_cast<std::uint64_t>(rep));
}

double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& gen) {
  const double u1 = uniform01(gen);
  const double u2 = uniform01(gen);
  return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string design_rule_name(DesignRule rule) {
  return rule == DesignRule::FullCrossing ? "full_crossing" : "salamander_style";
}

DesignRule parse_design_rule(const std::string& text) {
  if (text == "full_crossing") return DesignRule::FullCrossing;
  if (text == "salamander_style") return DesignRule::SalamanderStyle;
  throw std::invalid_argument("unknown design rule '" + text + "'");
}

CrossedDesign make_design(DesignRule rule, int m, int n, int block) {
  return rule == DesignRule::FullCrossing ? CrossedDesign::full_crossing(m, n)
                                          : CrossedDesign::salamander_style(m, n, block);
}

ResponseTable simulate(const CrossedDesign& design, const Theta& theta0, std::uint64_t seed,
                       RandomEffects* effects) {
  std::mt19937_64 gen(seed);
  RandomEffects re;
  re.u.resize(design.rows());
  re.v.resize(design.cols());
  const double su = std::sqrt(theta0.sigma2), sv = std::sqrt(theta0.tau2);
  for (Eigen::Index i = 0; i < re.u.size(); ++i) re.u[i] = su * standard_normal(gen);
  for (Eigen::Index j = 0; j < re.v.size(); ++j) re.v[j] = sv * standard_normal(gen);
  std::vector<std::uint8_t> y;
  y.reserve(static_cast<std::size_t>(design.total()));
  for (const auto& o : design.observations()) {
    const double p = logistic(theta0.mu + re.u[o.i] + re.v[o.j]);
    y.push_back(uniform01(gen) < p ? 1 : 0);
  }
  if (effects != nullptr) *effects = re;
  return ResponseTable(design, std::move(y));
}

std::string estimator_name(StudyEstimator e) {
  switch (e) {
    case StudyEstimator::Subset: return "subset";
    case StudyEstimator::FullQuadrature: return "full_quadrature";
    case StudyEstimator::FullMc: return "full_mc";
    case StudyEstimator::Dc: return "dc";
    case StudyEstimator::FiniteGrid: return "finite_grid";
  }
  return "?";
}

StudyEstimator parse_estimator(const std::string& text) {
  for (auto e : {StudyEstimator::Subset, StudyEstimator::FullQuadrature, StudyEstimator::FullMc,
                 StudyEstimator::Dc, StudyEstimator::FiniteGrid}) {
    if (estimator_name(e) == text) return e;
  }
  throw std::invalid_argument("unknown estimator '" + text + "'");
}

StudyConfig study_config_from(const Config& cfg) {
  StudyConfig out;
  try {
    if (auto sizes = cfg.find("sizes")) {
      out.sizes.clear();
      for (const auto& s : detail::split(*sizes, '|')) {
        const auto x = s.find('x');
        if (x == std::string::npos) throw std::invalid_argument("size '" + s + "' is not MxN");
        out.sizes.emplace_back(detail::parse_int(s.substr(0, x)), detail::parse_int(s.substr(x + 1)));
      }
    }
    out.replications = static_cast<int>(cfg.get_int("replications", out.replications));
    if (auto t = cfg.find("theta0")) out.theta0 = parse_theta_triple(*t);
    out.theta0.free = parse_free_mask(cfg.get_string("free", "mu"));
    if (auto e = cfg.find("estimators")) {
      out.estimators.clear();
      for (const auto& name : detail::split(*e, '|')) out.estimators.push_back(parse_estimator(name));
    }
    out.base_seed = cfg.get_uint64("seed", out.base_seed);
    out.design_rule = parse_design_rule(cfg.get_string("design", "full_crossing"));
    out.block = static_cast<int>(cfg.get_int("block", out.block));
    out.output_path = cfg.get_string("output", "");
    out.threads = static_cast<int>(cfg.get_int("threads", out.threads));
    out.likelihood.order = static_cast<int>(cfg.get_int("order", out.likelihood.order));
    out.likelihood.mc_draws = static_cast<int>(cfg.get_int("mc_draws", out.likelihood.mc_draws));
    out.likelihood.shift_order = static_cast<int>(cfg.get_int("shift_order", out.likelihood.shift_order));
    out.tol = cfg.get_double("tol", out.tol);
    out.dc_K = static_cast<int>(cfg.get_int("K", out.dc_K));
    out.dc_B = static_cast<int>(cfg.get_int("B", out.dc_B));
    out.dc_burn_in = static_cast<int>(cfg.get_int("burn_in", out.dc_burn_in));
    if (auto g = cfg.find("grid")) {
      for (const auto& t : detail::split(*g, '|')) {
        Theta th = parse_theta_triple(t);
        th.free = out.theta0.free;
        out.grid.push_back(th);
      }
    }
    out.timing = cfg.get_bool("timing", out.timing);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  cfg.require_all_used();
  if (out.replications < 1) throw ConfigError("replications must be at least 1");
  if (out.sizes.empty()) throw ConfigError("sizes must not be empty");
  if (out.estimators.empty()) throw ConfigError("estimators must not be empty");
  if (out.threads < 1) throw ConfigError("threads must be at least 1");
  return out;
}

namespace {

struct Outcome {
  Theta theta;
  std::string status;
};

std::string fit_status(const FitResult& r, bool fallback) {
  if (r.at_boundary) return "boundary";
  if (!r.converged) return "nonconverged";
  return fallback ? "ok_mc" : "ok";
}

Outcome run_estimator(StudyEstimator est, const ResponseTable& data, const StudyConfig& cfg,
                      std::uint64_t seed) {
  LikelihoodOptions lik = cfg.likelihood;
  lik.mc_seed = splitmix64(seed + 1);
  switch (est) {
    case StudyEstimator::Subset: {
      const FitResult r = fit_subset_mle(data, cfg.theta0, lik.order);
      return {r.theta_hat, fit_status(r, false)};
    }
    case StudyEstimator::FullQuadrature:
    case StudyEstimator::FullMc: {
      const bool exact = est == StudyEstimator::FullQuadrature &&
                         exact_within_cap(data.design(), lik.order);
      lik.method = exact ? LikelihoodMethod::ExactQuadrature : LikelihoodMethod::MonteCarlo;
      FullFitOptions opts;
      opts.likelihood = lik;
      opts.tol = cfg.tol;
      const FitResult r = fit_full_mle(data, cfg.theta0, opts);
      return {r.theta_hat, fit_status(r, est == StudyEstimator::FullQuadrature && !exact)};
    }
    case StudyEstimator::Dc: {
      CloneConfig cc;
      cc.K = cfg.dc_K;
      cc.B = cfg.dc_B;
      cc.burn_in = cfg.dc_burn_in;
      cc.seed = splitmix64(seed + 2);
      cc.order = lik.order;
      const DcResult r = fit_dc_mle(data, cfg.theta0, cc);
      return {r.posterior_mean, "ok"};
    }
    case StudyEstimator::FiniteGrid: {
      std::vector<Theta> grid = cfg.grid;
      if (grid.empty()) {
        for (double d : {-1.0, 0.0, 1.0}) {
          Theta t = cfg.theta0;
          t.mu += d;
          grid.push_back(t);
        }
      }
      lik.method = exact_within_cap(data.design(), lik.order) ? LikelihoodMethod::ExactQuadrature
                                                              : LikelihoodMethod::MonteCarlo;
      const FitResult r = fit_finite_mle(data, grid, lik);
      return {r.theta_hat, "ok"};
    }
  }
  throw std::logic_error("unhandled estimator");
}

std::vector<StudyRow> run_replication(const StudyConfig& cfg, int m, int n, int rep) {
  const std::uint64_t seed = derive_seed(cfg.base_seed, m, n, rep);
  const ResponseTable data = simulate(make_design(cfg.design_rule, m, n, cfg.block), cfg.theta0, seed);
  const auto params = cfg.theta0.free_params();
  std::vector<StudyRow> rows;
  for (StudyEstimator est : cfg.estimators) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome res;
    bool failed = false;
    try {
      res = run_estimator(est, data, cfg, seed);
    } catch (const SubsetMleDiverges&) {
      failed = true;
      res.status = "diverged";
    } catch (const std::exception&) {
      failed = true;
      res.status = "error";
    }
    const double ms =
        cfg.timing ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()
                   : 0.0;
    for (Param p : params) {
      StudyRow row{m, n, rep, estimator_name(est), param_name(p), 0.0, 0.0, res.status, ms, seed};
      if (failed) {
        row.estimate = row.abs_error = std::numeric_limits<double>::quiet_NaN();
      } else {
        row.estimate = res.theta.get(p);
        row.abs_error = std::abs(row.estimate - cfg.theta0.get(p));
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace

std::vector<StudyRow> run_study(const StudyConfig& cfg) {
  struct Task {
    int m, n, rep;
  };
  std::vector<Task> tasks;
  for (const auto& [m, n] : cfg.sizes) {
    for (int rep = 0; rep < cfg.replications; ++rep) tasks.push_back({m, n, rep});
  }
  std::vector<std::vector<StudyRow>> slots(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      slots[t] = run_replication(cfg, tasks[t].m, tasks[t].n, tasks[t].rep);
    }
  };
  const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(tasks.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::vector<StudyRow> rows;
  for (auto& s : slots) rows.insert(rows.end(), s.begin(), s.end());
  return rows;
}

void write_study_csv(std::ostream& out, const std::vector<StudyRow>& rows) {
  out << kStudyHeader << '\n';
  for (const auto& r : rows) {
    out << r.m << ',' << r.n << ',' << r.rep << ',' << r.estimator << ',' << r.parameter << ','
        << format_double(r.estimate) << ',' << format_double(r.abs_error) << ',' << r.status << ','
        << format_double(r.runtime_ms, 6) << ',' << r.seed << '\n';
  }
}

std::vector<StudyRow> read_study_csv(std::istream& in, const std::optional<Theta>& truth) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kStudyHeader) {
    throw std::invalid_argument("not a study CSV: unexpected header");
  }
  std::vector<StudyRow> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 10) throw std::invalid_argument("study CSV row has " + std::to_string(f.size()) + " fields");
    StudyRow r;
    r.m = detail::parse_int(f[0]);
    r.n = detail::parse_int(f[1]);
    r.rep = detail::parse_int(f[2]);
    r.estimator = f[3];
    r.parameter = f[4];
    r.estimate = detail::parse_double(f[5]);
    r.abs_error = detail::parse_double(f[6]);
    r.status = f[7];
    r.runtime_ms = detail::parse_double(f[8]);
    r.seed = std::stoull(f[9]);
    if (truth) {
      Param p = Param::Mu;
      if (r.parameter == "sigma2") p = Param::Sigma2;
      else if (r.parameter == "tau2") p = Param::Tau2;
      else if (r.parameter != "mu") throw std::invalid_argument("unknown parameter '" + r.parameter + "'");
      r.abs_error = std::abs(r.estimate - truth->get(p));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<StudySummary> summarize_study(const std::vector<StudyRow>& rows) {
  std::map<std::tuple<int, int, std::string, std::string>, std::vector<double>> groups;
  std::vector<std::tuple<int, int, std::string, std::string>> order;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.m, r.n, r.estimator, r.parameter);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(std::isnan(r.abs_error) ? std::numeric_limits<double>::infinity() : r.abs_error);
  }
  std::vector<StudySummary> out;
  for (const auto& key : order) {
    auto v = groups[key];
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size();
    StudySummary s;
    std::tie(s.m, s.n, s.estimator, s.parameter) = key;
    s.replications = static_cast<int>(k);
    s.failures = static_cast<int>(std::count(v.begin(), v.end(), std::numeric_limits<double>::infinity()));
    s.median_abs_error = k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<LimitingRow> limiting_demo(const std::vector<std::pair<int, int>>& sizes,
                                       int replications, std::uint64_t seed) {
  if (replications < 2) throw std::invalid_argument("limiting demo needs at least 2 replications");
  std::vector<LimitingRow> out;
  for (const auto& [m, n] : sizes) {
    if (m < 1 || n < 1) throw std::invalid_argument("limiting demo sizes must be positive");
    std::mt19937_64 gen(derive_seed(seed, m, n, 0));
    Eigen::VectorXd est(replications);
    Eigen::VectorXd u(m), v(n);
    for (int r = 0; r < replications; ++r) {
      for (int i = 0; i < m; ++i) u[i] = standard_normal(gen);
      for (int j = 0; j < n; ++j) v[j] = standard_normal(gen);
      double total = 0.0;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) total += u[i] + v[j] + standard_normal(gen);
      }
      est[r] = total / (double(m) * double(n));
    }
    LimitingRow row;
    row.m = m;
    row.n = n;
    row.replications = replications;
    row.empirical_var = (est.array() - est.mean()).square().sum() / double(replications - 1);
    row.analytic_var = 1.0 / m + 1.0 / n + 1.0 / (double(m) * double(n));
    row.ratio = row.empirical_var / row.analytic_var;
    out.push_back(row);
  }
  return out;
}

std::vector<LimitingRow> limiting_demo(int m_fixed, const std::vector<int>& n_ladder,
                                       int replications, std::uint64_t seed) {
  if (m_fixed < 1) throw std::invalid_argument("m_fixed must be at least 1");
  std::vector<std::pair<int, int>> sizes;
  for (int n : n_ladder) sizes.emplace_back(m_fixed, n);
  return limiting_demo(sizes, replications, seed);
}

void write_limiting_csv(std::ostream& out, const std::vector<LimitingRow>& rows) {
  out << "m,n,replications,empirical_var,analytic_var,ratio\n";
  for (const auto& r : rows) {
    out << r.m << ',' << r.n << ',' << r.replications << ',' << format_double(r.empirical_var) << ','
        << format_double(r.analytic_var) << ',' << format_double(r.ratio) << '\n';
  }
}

}  // namespace crossglmm
