#include "crossglmm/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>

#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "crossglmm/config.hpp"
#include "crossglmm/estimators.hpp"
#include "crossglmm/harness.hpp"
#include "crossglmm/identify.hpp"
#include "crossglmm/information.hpp"
#include "strings.hpp"

namespace crossglmm {

namespace {

using detail::format_double;

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheck = 3;

struct Flags {
  std::string config;
  std::string out;
  std::vector<std::string> sets;
  bool timing = false;
  // flag -> config key
  std::vector<std::pair<std::string, std::optional<std::string>>> overrides = {
      {"seed", {}}, {"threads", {}}, {"m", {}}, {"n", {}}, {"theta0", {}},
      {"theta", {}}, {"K", {}}, {"B", {}}, {"replications", {}}};
};

void add_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "settings file (key = value lines)");
  sub->add_option("--out", f.out, "output CSV path (default: stdout)");
  sub->add_option("--set", f.sets, "extra key=value setting")->take_all();
  static const std::vector<std::pair<std::string, std::string>> names = {
      {"--seed", "seed"}, {"--threads", "threads"}, {"--m", "m"}, {"--n", "n"},
      {"--theta0", "true parameter mu,sigma2,tau2"}, {"--theta", "parameter mu,sigma2,tau2"},
      {"--K", "clone count"}, {"--B", "retained draws"}, {"--reps", "replications"}};
  for (std::size_t k = 0; k < names.size(); ++k) {
    sub->add_option(names[k].first, f.overrides[k].second, names[k].second);
  }
}

Config build_config(const Flags& f) {
  Config cfg = f.config.empty() ? Config{} : Config::load(f.config);
  for (const auto& [key, value] : f.overrides) {
    if (value) cfg.set(key, *value);
  }
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (f.timing) cfg.set("timing", "true");
  return cfg;
}

// Runs `read` and turns any failure into a ConfigError; then rejects unused keys.
template <typename F>
auto settings(const Config& cfg, F&& read) {
  try {
    auto s = read();
    cfg.require_all_used();
    return s;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

struct Output {
  const Flags& flags;
  std::ostream& out;
  std::ostream& err;

  void emit(const std::function<void(std::ostream&)>& write, const std::string& summary) const {
    if (flags.out.empty()) {
      write(out);
      err << summary << '\n';
      return;
    }
    std::ofstream file(flags.out);
    if (!file) throw ConfigError("cannot write output file '" + flags.out + "'");
    write(file);
    file.close();
    if (!file) throw std::runtime_error("failed writing '" + flags.out + "'");
    out << summary << '\n';
  }
};

struct DataSource {
  std::optional<std::string> path;
  int m = 4;
  int n = 4;
  Theta theta0{0.0, 1.0, 1.0};
  DesignRule rule = DesignRule::FullCrossing;
  int block = 1;
  std::uint64_t seed = 1;
};

DataSource read_data_source(const Config& c) {
  DataSource d;
  d.path = c.find("data");
  d.m = static_cast<int>(c.get_int("m", d.m));
  d.n = static_cast<int>(c.get_int("n", d.n));
  d.theta0 = parse_theta_triple(c.get_string("theta0", "0,1,1"));
  d.rule = parse_design_rule(c.get_string("design", "full_crossing"));
  d.block = static_cast<int>(c.get_int("block", 1));
  d.seed = c.get_uint64("seed", 1);
  return d;
}

ResponseTable load_data(const DataSource& d) {
  if (d.path) {
    std::ifstream in(*d.path);
    if (!in) throw ConfigError("cannot read data file '" + *d.path + "'");
    return read_table_csv(in);
  }
  return simulate(make_design(d.rule, d.m, d.n, d.block), d.theta0, d.seed);
}

Theta read_model(const Config& c, const DataSource& d) {
  Theta t = c.has("theta") ? parse_theta_triple(c.get_string("theta", "")) : d.theta0;
  t.free = parse_free_mask(c.get_string("free", "mu"));
  if (t.free.count() == 0) throw std::invalid_argument("free must name at least one parameter");
  return t;
}

LikelihoodOptions read_likelihood(const Config& c, const ResponseTable* data) {
  LikelihoodOptions o;
  o.order = static_cast<int>(c.get_int("order", o.order));
  o.mc_draws = static_cast<int>(c.get_int("mc_draws", o.mc_draws));
  o.shift_order = static_cast<int>(c.get_int("shift_order", o.shift_order));
  const std::string method = c.get_string("method", "auto");
  if (method == "quadrature") {
    o.method = LikelihoodMethod::ExactQuadrature;
  } else if (method == "mc") {
    o.method = LikelihoodMethod::MonteCarlo;
  } else if (method == "auto") {
    o.method = data != nullptr && exact_within_cap(data->design(), o.order)
                   ? LikelihoodMethod::ExactQuadrature
                   : LikelihoodMethod::MonteCarlo;
  } else {
    throw std::invalid_argument("method must be auto, quadrature or mc");
  }
  return o;
}

std::vector<double> parse_doubles(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const auto& s : items) out.push_back(detail::parse_double(s));
  return out;
}

void write_fit_csv(std::ostream& o, const FitResult& r) {
  o << "parameter,estimate,loglik,method,converged,at_boundary,evaluations\n";
  for (Param p : r.theta_hat.free_params()) {
    o << param_name(p) << ',' << format_double(r.theta_hat.get(p)) << ',' << format_double(r.loglik)
      << ',' << fit_method_name(r.method) << ',' << int(r.converged) << ',' << int(r.at_boundary)
      << ',' << r.evaluations << '\n';
  }
}

std::string fit_summary(const std::string& cmd, const FitResult& r) {
  std::string s = cmd + ":";
  for (Param p : r.theta_hat.free_params()) s += " " + param_name(p) + "=" + format_double(r.theta_hat.get(p), 6);
  s += " loglik=" + format_double(r.loglik, 8);
  if (r.at_boundary) s += " (boundary)";
  if (!r.converged) s += " (not converged)";
  return s;
}

int cmd_simulate(const Config& c, const Output& o) {
  const DataSource d = settings(c, [&] { return read_data_source(c); });
  if (d.path) throw ConfigError("simulate does not read a data file");
  const ResponseTable t = load_data(d);
  o.emit([&](std::ostream& s) { write_table_csv(s, t); },
         "simulate: " + std::to_string(d.m) + "x" + std::to_string(d.n) + " " + design_rule_name(d.rule) +
             ", " + std::to_string(t.design().total()) + " observations, mean " + format_double(t.mean(), 6));
  return 0;
}

int cmd_fit(const Config& c, const Output& o) {
  struct S {
    DataSource d;
    Theta model;
    FullFitOptions opts;
  };
  std::optional<ResponseTable> data;
  const S s = settings(c, [&] {
    S s{read_data_source(c), {}, {}};
    s.model = read_model(c, s.d);
    data.emplace(load_data(s.d));
    s.opts.likelihood = read_likelihood(c, &*data);
    s.opts.likelihood.mc_seed = splitmix64(s.d.seed + 1);
    s.opts.tol = c.get_double("tol", s.opts.tol);
    s.opts.init_from_subset = c.get_string("init", "subset") == "subset";
    return s;
  });
  const FitResult r = fit_full_mle(*data, s.model, s.opts);
  o.emit([&](std::ostream& out) { write_fit_csv(out, r); }, fit_summary("fit", r));
  return 0;
}

int cmd_subset_fit(const Config& c, const Output& o) {
  std::optional<ResponseTable> data;
  Theta model;
  int order = kDefaultOrder;
  settings(c, [&] {
    const DataSource d = read_data_source(c);
    model = read_model(c, d);
    order = static_cast<int>(c.get_int("order", order));
    data.emplace(load_data(d));
    return 0;
  });
  const FitResult r = fit_subset_mle(*data, model, order);
  o.emit([&](std::ostream& out) { write_fit_csv(out, r); }, fit_summary("subset-fit", r));
  return 0;
}

int cmd_dc_fit(const Config& c, const Output& o) {
  std::optional<ResponseTable> data;
  Theta model;
  CloneConfig cc;
  settings(c, [&] {
    const DataSource d = read_data_source(c);
    model = read_model(c, d);
    cc.K = static_cast<int>(c.get_int("K", 16));
    cc.B = static_cast<int>(c.get_int("B", cc.B));
    cc.burn_in = static_cast<int>(c.get_int("burn_in", cc.burn_in));
    cc.order = static_cast<int>(c.get_int("order", cc.order));
    cc.adapt = c.get_bool("adapt", cc.adapt);
    cc.seed = c.has("chain_seed") ? c.get_uint64("chain_seed", 0) : splitmix64(d.seed + 2);
    if (auto pm = c.find("prior_mean")) cc.prior_mean = parse_theta_triple(*pm);
    auto to_vec = [](const std::vector<double>& v) {
      return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size())).eval();
    };
    const auto psd = parse_doubles(c.get_list("prior_sd", {}));
    if (!psd.empty()) cc.prior_sd = to_vec(psd);
    const auto qsd = parse_doubles(c.get_list("proposal_sd", {}));
    if (!qsd.empty()) cc.proposal_sd = to_vec(qsd);
    data.emplace(load_data(d));
    return 0;
  });
  const DcResult r = fit_dc_mle(*data, model, cc);
  o.emit(
      [&](std::ostream& out) {
        out << "parameter,posterior_mean,scaled_var,sd,ess,acceptance_rate,acceptance_warning\n";
        for (std::size_t a = 0; a < r.chain_summary.size(); ++a) {
          const auto& p = r.chain_summary[a];
          out << p.name << ',' << format_double(p.mean) << ','
              << format_double(r.scaled_cov(Eigen::Index(a), Eigen::Index(a))) << ',' << format_double(p.sd)
              << ',' << format_double(p.ess, 6) << ',' << format_double(r.acceptance_rate, 6) << ','
              << int(r.acceptance_warning) << '\n';
        }
      },
      "dc-fit: K=" + std::to_string(cc.K) + " acceptance " + format_double(r.acceptance_rate, 3) +
          (r.acceptance_warning ? " (outside 0.05-0.7)" : "") + ", posterior mean mu=" +
          format_double(r.posterior_mean.mu, 6));
  return 0;
}

int cmd_finite_fit(const Config& c, const Output& o) {
  std::optional<ResponseTable> data;
  std::vector<Theta> grid;
  LikelihoodOptions lik;
  settings(c, [&] {
    const DataSource d = read_data_source(c);
    const Theta model = read_model(c, d);
    if (auto g = c.find("grid")) {
      for (const auto& t : detail::split(*g, '|')) grid.push_back(parse_theta_triple(t));
    } else {
      for (double shift : {-1.0, 0.0, 1.0}) {
        Theta t = model;
        t.mu += shift;
        grid.push_back(t);
      }
    }
    for (auto& t : grid) t.free = model.free;
    data.emplace(load_data(d));
    lik = read_likelihood(c, &*data);
    lik.mc_seed = splitmix64(d.seed + 1);
    return 0;
  });
  const FitResult r = fit_finite_mle(*data, grid, lik);
  o.emit(
      [&](std::ostream& out) {
        out << "index,mu,sigma2,tau2,loglik,selected\n";
        for (std::size_t g = 0; g < grid.size(); ++g) {
          out << g << ',' << format_double(grid[g].mu) << ',' << format_double(grid[g].sigma2) << ','
              << format_double(grid[g].tau2) << ',' << format_double(r.grid_loglik[g]) << ','
              << int(int(g) == r.grid_index) << '\n';
        }
      },
      "finite-fit: selected index " + std::to_string(r.grid_index) + " of " + std::to_string(grid.size()) +
          " (mu=" + format_double(r.theta_hat.mu, 6) + ")");
  return 0;
}

struct TinyDesign {
  CrossedDesign design{Eigen::MatrixXi::Ones(2, 2)};
  EnumerationOptions enumeration;
};

TinyDesign read_tiny_design(const Config& c) {
  TinyDesign t;
  const int m = static_cast<int>(c.get_int("m", 2));
  const int n = static_cast<int>(c.get_int("n", 2));
  t.design = make_design(parse_design_rule(c.get_string("design", "full_crossing")), m, n,
                         static_cast<int>(c.get_int("block", 1)));
  t.enumeration.order = static_cast<int>(c.get_int("order", t.enumeration.order));
  t.enumeration.cap = static_cast<int>(c.get_int("cap", t.enumeration.cap));
  t.enumeration.symmetry = c.get_bool("symmetry", false);
  return t;
}

int cmd_info_loss(const Config& c, const Output& o) {
  TinyDesign tiny;
  Theta theta;
  SubsetSpec subset;
  settings(c, [&] {
    tiny = read_tiny_design(c);
    theta = parse_theta_triple(c.get_string("theta", "0,1,1"));
    theta.free = parse_free_mask(c.get_string("free", "mu"));
    subset = resolve_subset(tiny.design, parse_subset_kind(c.get_string("subset", "diagonal")));
    if (subset.empty()) throw std::invalid_argument("subset is empty for this design");
    return 0;
  });
  const InfoMatrices r = info_loss(tiny.design, theta, subset, tiny.enumeration);
  const Eigen::MatrixXd gap = r.i_full - r.i_subset;
  const double gap_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (gap + gap.transpose()))
                             .eigenvalues()
                             .minCoeff();
  const double loss_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (r.loss + r.loss.transpose()))
                              .eigenvalues()
                              .minCoeff();
  const bool pass = r.identity_holds && gap_eig > -1e-6 && loss_eig > -1e-6;
  const auto params = theta.free_params();
  o.emit(
      [&](std::ostream& out) {
        out << "matrix,row,col,value\n";
        const std::pair<const char*, const Eigen::MatrixXd*> mats[] = {
            {"i_full", &r.i_full}, {"i_subset", &r.i_subset}, {"loss", &r.loss}};
        for (const auto& [name, mat] : mats) {
          for (Eigen::Index a = 0; a < mat->rows(); ++a) {
            for (Eigen::Index b = 0; b < mat->cols(); ++b) {
              out << name << ',' << param_name(params[std::size_t(a)]) << ','
                  << param_name(params[std::size_t(b)]) << ',' << format_double((*mat)(a, b), 15) << '\n';
            }
          }
        }
      },
      std::string("info-loss: ") + (pass ? "pass" : "FAIL") + ", identity residual " +
          format_double(r.identity_residual, 3) + ", min eigenvalue of I_f - I_s " + format_double(gap_eig, 6));
  return pass ? 0 : kExitCheck;
}

int cmd_check_subset(const Config& c, const Output& o) {
  TinyDesign tiny;
  Theta theta0, theta;
  SubsetSpec subset;
  double lambda = 1.0;
  settings(c, [&] {
    tiny = read_tiny_design(c);
    theta0 = parse_theta_triple(c.get_string("theta0", "0,1,1"));
    theta = parse_theta_triple(c.get_string("theta", "0.5,1,1"));
    subset = resolve_subset(tiny.design, parse_subset_kind(c.get_string("subset", "diagonal")));
    if (subset.empty()) throw std::invalid_argument("subset is empty for this design");
    lambda = c.get_double("lambda", lambda);
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    return 0;
  });
  const InequalityReport r = check_subset_inequality(
      tiny.design, theta0, theta, subset, [&](const std::vector<std::uint8_t>&) { return lambda; },
      tiny.enumeration);
  o.emit([&](std::ostream& out) { write_inequality_csv(out, r); },
         std::string("check-subset: ") + (r.pass ? "pass" : "FAIL") + ", max(lhs - rhs) = " +
             format_double(r.max_violation, 6) + " over " + std::to_string(r.rows.size()) + " subset outcomes");
  return r.pass ? 0 : kExitCheck;
}

int cmd_identify(const Config& c, const Output& o) {
  struct S {
    Theta theta0;
    double epsilon, M;
    int density;
    std::vector<double> mu_range, psi2_range;
    int m_density;
    double sl_mu, sl_psi2;
    int gamma_points;
    int order;
  };
  const S s = settings(c, [&] {
    S s;
    s.theta0 = parse_theta_triple(c.get_string("theta0", "0.2,1,0.8"));
    s.epsilon = c.get_double("epsilon", 0.2);
    s.M = c.get_double("M", 3.0);
    s.density = static_cast<int>(c.get_int("density", 7));
    s.mu_range = parse_doubles(c.get_list("mu_range", {"-2", "2"}));
    s.psi2_range = parse_doubles(c.get_list("psi2_range", {"0.25", "4"}));
    if (s.mu_range.size() != 2 || s.psi2_range.size() != 2) throw std::invalid_argument("ranges need lo|hi");
    s.m_density = static_cast<int>(c.get_int("m_density", 15));
    s.sl_mu = c.get_double("slepian_mu", 0.0);
    s.sl_psi2 = c.get_double("slepian_psi2", 2.0);
    s.gamma_points = static_cast<int>(c.get_int("gamma_points", 11));
    s.order = static_cast<int>(c.get_int("order", kDefaultOrder));
    return s;
  });
  const B2Report b2 = check_b2_grid(s.theta0, s.epsilon, s.M, s.density, s.order);
  double max_kl = -std::numeric_limits<double>::infinity();
  int disjunction_failures = 0;
  for (const auto& p : b2.points) {
    max_kl = std::max({max_kl, p.kl_pair, p.kl_offdiag});
    if (!(p.kl_pair < 0.0 || p.kl_offdiag < 0.0)) ++disjunction_failures;
  }
  const InjectivityReport inj =
      check_m_injective(linspace(s.mu_range[0], s.mu_range[1], s.m_density),
                        linspace(s.psi2_range[0], s.psi2_range[1], s.m_density), s.order);
  const SlepianReport sl = check_slepian_monotone(s.sl_mu, s.sl_psi2, linspace(0.0, 1.0, s.gamma_points), s.order);
  const bool kl_ok = max_kl <= 0.0;
  const bool pass = kl_ok && disjunction_failures == 0 && b2.pass && inj.pass && sl.pass;
  o.emit(
      [&](std::ostream& out) {
        out << "check,statistic,value,pass\n";
        out << "kl_nonpositive,max_kl," << format_double(max_kl) << ',' << int(kl_ok) << '\n';
        out << "disjunction,failures," << disjunction_failures << ',' << int(disjunction_failures == 0) << '\n';
        out << "b2_grid,delta," << format_double(b2.delta) << ',' << int(b2.pass) << '\n';
        out << "b2_grid,skipped," << b2.skipped << ",1\n";
        out << "m_injective,min_ratio," << format_double(inj.min_ratio) << ',' << int(inj.pass) << '\n';
        out << "slepian,min_gap," << format_double(sl.min_gap) << ',' << int(sl.pass) << '\n';
      },
      std::string("identify: ") + (pass ? "pass" : "FAIL") + ", " + std::to_string(b2.points.size()) +
          " grid points, delta " + format_double(b2.delta, 4) + ", M separation " +
          format_double(inj.min_ratio, 4) + ", Slepian gap " + format_double(sl.min_gap, 4));
  return pass ? 0 : kExitCheck;
}

int cmd_study(const Config& c, const Output& o) {
  const StudyConfig cfg = study_config_from(c);
  Flags flags = o.flags;
  if (flags.out.empty()) flags.out = cfg.output_path;
  const Output out{flags, o.out, o.err};
  const auto rows = run_study(cfg);
  int failures = 0;
  for (const auto& r : rows) failures += (r.status == "error" || r.status == "diverged");
  out.emit([&](std::ostream& s) { write_study_csv(s, rows); },
           "study: " + std::to_string(rows.size()) + " rows over " + std::to_string(cfg.sizes.size()) +
               " sizes x " + std::to_string(cfg.replications) + " replications, " +
               std::to_string(failures) + " failed");
  return 0;
}

int cmd_limiting_demo(const Config& c, const Output& o) {
  std::vector<std::pair<int, int>> sizes;
  int reps = 500;
  std::uint64_t seed = 1;
  settings(c, [&] {
    const bool square = c.get_bool("m_equals_n", false);
    const int m = static_cast<int>(c.get_int("m", 1));
    for (const auto& s : c.get_list("n_ladder", {"10", "100", "1000"})) {
      const int n = detail::parse_int(s);
      sizes.emplace_back(square ? n : m, n);
    }
    reps = static_cast<int>(c.get_int("replications", reps));
    seed = c.get_uint64("seed", seed);
    return 0;
  });
  const auto rows = limiting_demo(sizes, reps, seed);
  std::string summary = "limiting-demo:";
  for (const auto& r : rows) {
    summary += " (" + std::to_string(r.m) + "," + std::to_string(r.n) + ") var " + format_double(r.empirical_var, 4);
  }
  o.emit([&](std::ostream& s) { write_limiting_csv(s, rows); }, summary);
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Crossed random-effects logistic GLMM estimation and verification", "crossglmm"};
  app.require_subcommand(1);
  Flags flags;
  using Handler = int (*)(const Config&, const Output&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
      {"simulate", "simulate a response table", cmd_simulate},
      {"fit", "full-data maximum likelihood", cmd_fit},
      {"subset-fit", "subset maximum likelihood", cmd_subset_fit},
      {"dc-fit", "data-cloning estimate", cmd_dc_fit},
      {"finite-fit", "maximum likelihood over a finite grid", cmd_finite_fit},
      {"info-loss", "enumerated information and information loss", cmd_info_loss},
      {"check-subset", "verify the subset inequality by enumeration", cmd_check_subset},
      {"identify", "identification checks for the pair subsets", cmd_identify},
      {"study", "Monte-Carlo consistency study", cmd_study},
      {"limiting-demo", "grand-mean variance in the linear crossed model", cmd_limiting_demo},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_flags(sub, flags);
    if (name == "study") sub->add_flag("--timing", flags.timing, "record wall-clock runtimes");
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }
  for (std::size_t k = 0; k < subs.size(); ++k) {
    if (!subs[k]->parsed()) continue;
    try {
      const Config cfg = build_config(flags);
      return std::get<2>(commands[k])(cfg, Output{flags, out, err});
    } catch (const ConfigError& e) {
      err << "config error: " << e.what() << '\n';
      return kExitConfig;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }
  err << app.help();
  return kExitConfig;
}

}  // namespace crossglmm
