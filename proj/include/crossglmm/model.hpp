#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace crossglmm {

// Parameter box shared by every optimizer and sampler in the library.
inline constexpr double kMuLower = -10.0;
inline constexpr double kMuUpper = 10.0;
inline constexpr double kVarLower = 1e-6;
inline constexpr double kVarUpper = 25.0;

/// Logistic function h(x) = e^x / (1 + e^x), evaluated without overflow.
template <typename Scalar>
inline Scalar logistic(Scalar x) {
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
inline Scalar logit(Scalar p) {
  return std::log(p) - std::log1p(-p);
}

/// log h(x), stable for large |x|.
template <typename Scalar>
inline Scalar log_logistic(Scalar x) {
  if (x >= Scalar(0)) {
    return -std::log1p(std::exp(-x));
  }
  return x - std::log1p(std::exp(x));
}

/// Bernoulli mass of y under success probability h(mu + u + v).
double conditional_mass(int y, double mu, double u, double v);

// ---------------------------------------------------------------------------
// Design

struct ObsIndex {
  int i;  // row, 0-based
  int j;  // column, 0-based
  int k;  // replicate, 0-based
};

/// Index set S with replicate counts c_ij. counts(i, j) == 0 means (i, j) is
/// not in S. Every row and every column carries at least one cell.
class CrossedDesign {
 public:
  /// Throws std::invalid_argument unless counts is non-empty, non-negative
  /// and irreducible.
  explicit CrossedDesign(Eigen::MatrixXi counts);

  static CrossedDesign full_crossing(int m, int n, int replicates = 1);
  /// Full crossing with c_ij = 2 when i and j fall in the same diagonal block
  /// of width `block`, c_ij = 1 elsewhere.
  static CrossedDesign salamander_style(int m, int n, int block = 1);

  int rows() const { return static_cast<int>(counts_.rows()); }
  int cols() const { return static_cast<int>(counts_.cols()); }
  int count(int i, int j) const { return counts_(i, j); }
  bool contains(int i, int j) const { return counts_(i, j) > 0; }
  const Eigen::MatrixXi& counts() const { return counts_; }

  /// Total number of observations N.
  int total() const { return static_cast<int>(obs_.size()); }
  /// Observations in canonical order: cells row-major, replicates ascending.
  const std::vector<ObsIndex>& observations() const { return obs_; }
  /// Flat position of observation (i, j, k); -1 when absent.
  int flat_index(int i, int j, int k) const;

  CrossedDesign transposed() const;

  bool is_full_crossing() const;
  bool operator==(const CrossedDesign& other) const { return counts_ == other.counts_; }

 private:
  Eigen::MatrixXi counts_;
  Eigen::MatrixXi offsets_;
  std::vector<ObsIndex> obs_;
};

// ---------------------------------------------------------------------------
// Parameters

struct FreeMask {
  bool mu = true;
  bool sigma2 = true;
  bool tau2 = true;

  int count() const { return int(mu) + int(sigma2) + int(tau2); }
  bool operator==(const FreeMask&) const = default;
};

enum class Param { Mu, Sigma2, Tau2 };

std::string param_name(Param p);

/// Parameter vector (mu, sigma2, tau2) plus which components are free.
struct Theta {
  double mu = 0.0;
  double sigma2 = 1.0;
  double tau2 = 1.0;
  FreeMask free{};

  Theta() = default;
  Theta(double mu_, double sigma2_, double tau2_, FreeMask free_ = {});

  /// Open-problem parametrization: only mu is estimated.
  static Theta mu_only(double mu, double sigma2, double tau2);

  double psi2() const { return sigma2 + tau2; }
  /// sigma2 / psi2; requires psi2 > 0.
  double gamma() const;

  double get(Param p) const;
  void set(Param p, double value);

  /// Free parameters in mask order (mu, sigma2, tau2).
  std::vector<Param> free_params() const;

  bool operator==(const Theta&) const = default;
};

/// Free components on the natural scale.
Eigen::VectorXd free_values(const Theta& theta);
/// Free components on the working scale: mu as is, variances as logs.
Eigen::VectorXd to_working(const Theta& theta);
/// Inverse of to_working; fixed components copied from `base`.
Theta from_working(const Theta& base, const Eigen::Ref<const Eigen::VectorXd>& working);
/// d(natural)/d(working) for each free component.
Eigen::VectorXd working_jacobian(const Theta& theta);

/// Working-scale box corresponding to the parameter box.
Eigen::VectorXd working_lower(const Theta& theta);
Eigen::VectorXd working_upper(const Theta& theta);

/// Parses "mu,sigma2,tau2" (all free).
Theta parse_theta_triple(const std::string& text);
/// Parses "mu|sigma2" style free lists.
FreeMask parse_free_mask(const std::string& text);
std::string format_free_mask(const FreeMask& mask);

/// key=value serialization: mu=, sigma2=, tau2=, free=mu|sigma2|tau2.
std::string serialize_theta(const Theta& theta);
Theta deserialize_theta(const std::string& text);

// ---------------------------------------------------------------------------
// Data

struct RandomEffects {
  Eigen::VectorXd u;
  Eigen::VectorXd v;
};

/// Binary responses y_ijk stored flat in design observation order.
class ResponseTable {
 public:
  ResponseTable(CrossedDesign design, std::vector<std::uint8_t> y);

  const CrossedDesign& design() const { return design_; }
  const std::vector<std::uint8_t>& values() const { return y_; }
  int y(int i, int j, int k) const;
  int at(int flat) const { return y_[static_cast<std::size_t>(flat)]; }

  /// Number of successes per cell (0 for cells outside S).
  const Eigen::MatrixXi& successes() const { return successes_; }

  double mean() const;
  ResponseTable transposed() const;

 private:
  CrossedDesign design_;
  std::vector<std::uint8_t> y_;
  Eigen::MatrixXi successes_;
};

/// Builds a table from the low `design.total()` bits of `bits`
/// (bit t is observation t).
ResponseTable table_from_bits(const CrossedDesign& design, std::uint64_t bits);

/// CSV with header i,j,k,y and 1-based indices; the design is inferred.
void write_table_csv(std::ostream& out, const ResponseTable& data);
ResponseTable read_table_csv(std::istream& in);

/// Log of the joint density of (y, u, v). Throws std::domain_error when a
/// zero variance meets a nonzero effect.
double complete_data_loglik(const ResponseTable& data, const Theta& theta,
                            const RandomEffects& effects);

// ---------------------------------------------------------------------------
// Subsets

enum class SubsetKind { Diagonal, ReplicatePairDiagonal, OffDiagonalPair, Explicit };

std::string subset_kind_name(SubsetKind kind);
SubsetKind parse_subset_kind(const std::string& text);

/// A subset y_[1] of the observations, grouped into independent elements.
struct SubsetSpec {
  SubsetKind kind;
  /// Each element lists flat observation indices.
  std::vector<std::vector<int>> elements;

  std::vector<int> indices() const;
  int size() const { return static_cast<int>(elements.size()); }
  bool empty() const { return elements.empty(); }
  /// Bitmask over observations selected by the subset (N <= 64).
  std::uint64_t mask() const;
};

/// Diagonal: (i,i) k=1. ReplicatePairDiagonal: (i,i) with c_ii = 2, both
/// replicates. OffDiagonalPair: (i,2i-1,1) with (i,2i,1) in 1-based terms.
SubsetSpec resolve_subset(const CrossedDesign& design, SubsetKind kind);
SubsetSpec explicit_subset(const CrossedDesign& design, std::vector<int> indices);

}  // namespace crossglmm
