#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "crossglmm/config.hpp"
#include "crossglmm/estimators.hpp"
#include "crossglmm/model.hpp"

namespace crossglmm {

/// splitmix64 finalizer: z += 0x9E3779B97F4A7C15;
/// z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
/// z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return z ^ (z >> 31).
std::uint64_t splitmix64(std::uint64_t x);

/// Replication seed:
///   s = splitmix64(base); s = splitmix64(s ^ m); s = splitmix64(s ^ n);
///   s = splitmix64(s ^ rep)
/// with m, n, rep as unsigned 64-bit integers.
std::uint64_t derive_seed(std::uint64_t base, int m, int n, int rep);

/// Uniform on [0, 1): (x >> 11) * 2^-53 for one mt19937_64 output x.
double uniform01(std::mt19937_64& gen);
/// Box-Muller from two uniforms: sqrt(-2 log(1 - u1)) * cos(2 pi u2).
double standard_normal(std::mt19937_64& gen);

enum class DesignRule { FullCrossing, SalamanderStyle };

std::string design_rule_name(DesignRule rule);
DesignRule parse_design_rule(const std::string& text);
CrossedDesign make_design(DesignRule rule, int m, int n, int block = 1);

/// Draws u_1..u_m, then v_1..v_n, then one uniform per observation in flat
/// order (y = 1 when it falls below h(mu + u_i + v_j)), all from one
/// mt19937_64 seeded with `seed`.
ResponseTable simulate(const CrossedDesign& design, const Theta& theta0, std::uint64_t seed,
                       RandomEffects* effects = nullptr);

enum class StudyEstimator { Subset, FullQuadrature, FullMc, Dc, FiniteGrid };

std::string estimator_name(StudyEstimator e);
StudyEstimator parse_estimator(const std::string& text);

struct StudyConfig {
  std::vector<std::pair<int, int>> sizes{{5, 5}, {10, 10}, {20, 20}};
  int replications = 200;
  Theta theta0 = Theta::mu_only(0.5, 1.0, 1.0);
  std::vector<StudyEstimator> estimators{StudyEstimator::Subset, StudyEstimator::FullQuadrature};
  std::uint64_t base_seed = 1;
  DesignRule design_rule = DesignRule::FullCrossing;
  int block = 1;
  std::string output_path;
  int threads = 1;
  /// order, mc_draws and shift_order are used; method and seed are set per fit.
  LikelihoodOptions likelihood;
  double tol = 1e-4;
  int dc_K = 16;
  int dc_B = 1000;
  int dc_burn_in = 500;
  /// Empty: theta0 with mu shifted by -1, 0, +1.
  std::vector<Theta> grid;
  /// Record wall-clock runtimes; off by default so output is reproducible.
  bool timing = false;
};

/// Reads the study keys (see README) and rejects unknown ones.
StudyConfig study_config_from(const Config& cfg);

struct StudyRow {
  int m = 0;
  int n = 0;
  int rep = 0;
  std::string estimator;
  std::string parameter;
  double estimate = 0.0;
  double abs_error = 0.0;
  /// ok, ok_mc, boundary, nonconverged, diverged or error
  std::string status;
  double runtime_ms = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kStudyHeader =
    "m,n,rep,estimator,parameter,estimate,abs_error,status,runtime_ms,seed";

/// Rows ordered by (size, rep, estimator, parameter). Each replication uses
/// derive_seed(base_seed, m, n, rep) for simulation; its likelihood draws use
/// splitmix64(seed + 1) and its data-cloning chain splitmix64(seed + 2).
/// Replications may run on several threads; the output does not depend on it.
std::vector<StudyRow> run_study(const StudyConfig& cfg);

void write_study_csv(std::ostream& out, const std::vector<StudyRow>& rows);
/// With `truth`, abs_error is recomputed as |estimate - truth| for each row's
/// parameter instead of taken from the file.
std::vector<StudyRow> read_study_csv(std::istream& in, const std::optional<Theta>& truth = std::nullopt);

struct StudySummary {
  int m = 0;
  int n = 0;
  std::string estimator;
  std::string parameter;
  /// Failed fits count as infinite error.
  double median_abs_error = 0.0;
  int replications = 0;
  int failures = 0;
};

std::vector<StudySummary> summarize_study(const std::vector<StudyRow>& rows);

struct LimitingRow {
  int m = 0;
  int n = 0;
  int replications = 0;
  double empirical_var = 0.0;
  double analytic_var = 0.0;
  double ratio = 0.0;  // empirical / analytic
};

/// Linear crossed model y_ij = u_i + v_j + e_ij with unit variances; the
/// grand mean is the estimator. Analytic variance 1/m + 1/n + 1/(mn).
/// Size (m, n) uses derive_seed(seed, m, n, 0) for all its replications.
std::vector<LimitingRow> limiting_demo(const std::vector<std::pair<int, int>>& sizes,
                                       int replications, std::uint64_t seed);
std::vector<LimitingRow> limiting_demo(int m_fixed, const std::vector<int>& n_ladder,
                                       int replications, std::uint64_t seed);

void write_limiting_csv(std::ostream& out, const std::vector<LimitingRow>& rows);

}  // namespace crossglmm
