#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crossglmm/likelihood.hpp"
#include "crossglmm/model.hpp"

namespace crossglmm {

inline constexpr int kEnumerationCap = 12;

struct EnumerationOptions {
  int cap = kEnumerationCap;  // largest N enumerated
  int order = kDefaultOrder;
  /// Full crossings with one replicate: evaluate one table per orbit of the
  /// row/column permutation group and share its mass across the orbit.
  bool symmetry = false;
};

/// All 2^N response tables of a design with their masses. Outcome `b` is
/// table_from_bits(design, b).
struct EnumeratedModel {
  CrossedDesign design;
  Theta theta;
  std::vector<double> log_probs;
  std::vector<double> probs;

  std::size_t outcomes() const { return probs.size(); }
  ResponseTable outcome(std::uint64_t bits) const { return table_from_bits(design, bits); }
};

EnumeratedModel enumerate_model(const CrossedDesign& design, const Theta& theta,
                                const EnumerationOptions& options = {});

/// Expected information sum_y p(y) s(y) s(y)' over the free parameters, on the
/// natural scale. s is the finite-difference score of the full log-likelihood,
/// or of the subset marginal (masses summed over completions) when `subset`
/// is given.
Eigen::MatrixXd fisher_info(const CrossedDesign& design, const Theta& theta,
                            const std::optional<SubsetSpec>& subset = std::nullopt,
                            const EnumerationOptions& options = {}, double step = kFdStep);

struct InfoMatrices {
  Eigen::MatrixXd i_full;
  Eigen::MatrixXd i_subset;
  /// E[Var(full score | subset data)]
  Eigen::MatrixXd loss;
  /// max |i_full - i_subset - loss|
  double identity_residual = 0.0;
  bool identity_holds = false;
};

inline constexpr double kIdentityTol = 1e-5;

InfoMatrices info_loss(const CrossedDesign& design, const Theta& theta, const SubsetSpec& subset,
                       const EnumerationOptions& options = {}, double step = kFdStep);

/// Information of `count` i.i.d. subset elements of one kind, from the
/// element's closed-form outcome masses. Natural scale.
Eigen::MatrixXd subset_fisher_info(const Theta& theta, SubsetKind kind, int count,
                                   int order = kDefaultOrder, double step = kFdStep);

struct InequalityRow {
  std::string y1_pattern;  // subset responses in subset order, e.g. "01"
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs - lhs
};

struct InequalityReport {
  std::vector<InequalityRow> rows;
  double max_violation = 0.0;  // max(lhs - rhs)
  bool pass = false;
};

inline constexpr double kInequalityTol = 1e-8;

using LambdaFn = std::function<double(const std::vector<std::uint8_t>& y1)>;

/// For each subset outcome y1:
///   lhs = P_theta0{ p_theta0(y) <= lambda(y1) p_theta(y) | y1 }
///   rhs = lambda(y1) p_theta(y1) / p_theta0(y1)
/// by exact summation over completions.
InequalityReport check_subset_inequality(const CrossedDesign& design, const Theta& theta0,
                                         const Theta& theta, const SubsetSpec& subset,
                                         const LambdaFn& lambda,
                                         const EnumerationOptions& options = {});

void write_inequality_csv(std::ostream& out, const InequalityReport& report);

}  // namespace crossglmm
