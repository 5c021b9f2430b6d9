#include <gtest/gtest.h>

#include <sstream>

#include "crossglmm/model.hpp"

using namespace crossglmm;

TEST(Logistic, StableInTails) {
  EXPECT_DOUBLE_EQ(logistic(0.0), 0.5);
  EXPECT_NEAR(logistic(800.0), 1.0, 0.0);
  EXPECT_EQ(logistic(-800.0), 0.0);
  EXPECT_NEAR(log_logistic(-800.0), -800.0, 1e-12);
  EXPECT_NEAR(log_logistic(800.0), 0.0, 1e-300);
  EXPECT_NEAR(logit(logistic(1.7)), 1.7, 1e-14);
}

TEST(CrossedDesign, FullCrossingShape) {
  const auto d = CrossedDesign::full_crossing(3, 4, 2);
  EXPECT_EQ(d.rows(), 3);
  EXPECT_EQ(d.cols(), 4);
  EXPECT_EQ(d.total(), 24);
  EXPECT_FALSE(d.is_full_crossing());
  EXPECT_TRUE(CrossedDesign::full_crossing(3, 4).is_full_crossing());
  EXPECT_EQ(d.flat_index(0, 0, 1), 1);
  EXPECT_EQ(d.flat_index(1, 0, 0), 8);
}

TEST(CrossedDesign, ObservationsAreRowMajor) {
  const auto d = CrossedDesign::full_crossing(2, 2);
  const auto& obs = d.observations();
  ASSERT_EQ(obs.size(), 4u);
  EXPECT_EQ(obs[1].i, 0);
  EXPECT_EQ(obs[1].j, 1);
  EXPECT_EQ(obs[2].i, 1);
  EXPECT_EQ(obs[2].j, 0);
}

TEST(CrossedDesign, RejectsUncoveredOrNegative) {
  Eigen::MatrixXi c(2, 2);
  c << 1, 0, 0, 1;  // two blocks, every row and column covered
  EXPECT_NO_THROW(CrossedDesign{c});
  c << 1, -1, 1, 1;
  EXPECT_THROW(CrossedDesign{c}, std::invalid_argument);
  Eigen::MatrixXi empty_col(2, 2);
  empty_col << 1, 0, 1, 0;
  EXPECT_THROW(CrossedDesign{empty_col}, std::invalid_argument);
}

TEST(CrossedDesign, SalamanderStyleDoublesDiagonalBlocks) {
  const auto d = CrossedDesign::salamander_style(4, 4, 2);
  EXPECT_EQ(d.count(0, 1), 2);
  EXPECT_EQ(d.count(1, 2), 1);
  EXPECT_EQ(d.count(3, 3), 2);
  EXPECT_EQ(CrossedDesign::salamander_style(3, 3).total(), 12);
}

TEST(Theta, ValidatesAndDerives) {
  EXPECT_THROW(Theta(0.0, -1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(Theta(std::nan(""), 1.0, 1.0), std::invalid_argument);
  const Theta t(0.5, 1.5, 0.5);
  EXPECT_DOUBLE_EQ(t.psi2(), 2.0);
  EXPECT_DOUBLE_EQ(t.gamma(), 0.75);
  EXPECT_THROW(Theta(0.0, 0.0, 0.0).gamma(), std::domain_error);
  const Theta m = Theta::mu_only(0.1, 1.0, 2.0);
  EXPECT_EQ(m.free_params().size(), 1u);
}

TEST(Theta, WorkingScaleRoundTrip) {
  const Theta t(0.3, 2.0, 0.5);
  const Eigen::VectorXd w = to_working(t);
  EXPECT_NEAR(w[1], std::log(2.0), 1e-15);
  const Theta back = from_working(t, w);
  EXPECT_NEAR(back.sigma2, 2.0, 1e-14);
  EXPECT_NEAR(back.tau2, 0.5, 1e-14);
  EXPECT_DOUBLE_EQ(working_jacobian(t)[2], 0.5);
}

TEST(Theta, TextRoundTrip) {
  Theta t(0.25, 1.5, 0.75, FreeMask{true, false, true});
  const Theta back = deserialize_theta(serialize_theta(t));
  EXPECT_EQ(back, t);
  EXPECT_EQ(parse_theta_triple(" 1, 2 ,3 "), Theta(1, 2, 3));
  EXPECT_THROW(parse_theta_triple("1,2"), std::invalid_argument);
  EXPECT_EQ(format_free_mask(parse_free_mask("mu|tau2")), "mu|tau2");
  EXPECT_THROW(parse_free_mask("rho"), std::invalid_argument);
}

TEST(ResponseTable, CsvRoundTrip) {
  const auto d = CrossedDesign::salamander_style(3, 3);
  std::vector<std::uint8_t> y(static_cast<std::size_t>(d.total()));
  for (std::size_t t = 0; t < y.size(); ++t) y[t] = static_cast<std::uint8_t>((t * 5 + 1) % 3 == 0);
  const ResponseTable table(d, y);
  std::stringstream s;
  write_table_csv(s, table);
  const ResponseTable back = read_table_csv(s);
  EXPECT_EQ(back.design(), d);
  EXPECT_EQ(back.values(), y);
}

TEST(ResponseTable, CsvRejectsGapsAndDuplicates) {
  std::stringstream dup("i,j,k,y\n1,1,1,0\n1,1,1,1\n");
  EXPECT_THROW(read_table_csv(dup), std::invalid_argument);
  std::stringstream gap("i,j,k,y\n1,1,2,0\n");
  EXPECT_THROW(read_table_csv(gap), std::invalid_argument);
  std::stringstream bad("i,j,k,y\n1,1,1,2\n");
  EXPECT_THROW(read_table_csv(bad), std::invalid_argument);
}

TEST(ResponseTable, SuccessCountsAndTranspose) {
  const auto d = CrossedDesign::full_crossing(2, 3, 2);
  std::vector<std::uint8_t> y(12, 0);
  y[static_cast<std::size_t>(d.flat_index(1, 2, 0))] = 1;
  y[static_cast<std::size_t>(d.flat_index(1, 2, 1))] = 1;
  const ResponseTable t(d, y);
  EXPECT_EQ(t.successes()(1, 2), 2);
  EXPECT_EQ(t.transposed().successes()(2, 1), 2);
  EXPECT_EQ(t.y(1, 2, 1), 1);
}

TEST(CompleteData, MatchesDirectSum) {
  const auto d = CrossedDesign::full_crossing(2, 2);
  const ResponseTable t(d, {1, 0, 0, 1});
  RandomEffects re{Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d(0.1, 0.4)};
  const Theta th(0.2, 1.0, 0.5);
  double expect = 0.0;
  const int ys[2][2] = {{1, 0}, {0, 1}};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double p = 1.0 / (1.0 + std::exp(-(0.2 + re.u[i] + re.v[j])));
      expect += ys[i][j] ? std::log(p) : std::log(1 - p);
    }
  }
  for (int i = 0; i < 2; ++i) expect += -0.5 * std::log(2 * M_PI * 1.0) - 0.5 * re.u[i] * re.u[i];
  for (int j = 0; j < 2; ++j) expect += -0.5 * std::log(2 * M_PI * 0.5) - 0.5 * re.v[j] * re.v[j] / 0.5;
  EXPECT_NEAR(complete_data_loglik(t, th, re), expect, 1e-12);
  EXPECT_THROW(complete_data_loglik(t, Theta(0, 0, 1), re), std::domain_error);
}

TEST(Subsets, ResolveKinds) {
  const auto d = CrossedDesign::salamander_style(4, 8);
  const auto diag = resolve_subset(d, SubsetKind::Diagonal);
  EXPECT_EQ(diag.size(), 4);
  EXPECT_EQ(diag.elements[1][0], d.flat_index(1, 1, 0));
  const auto pairs = resolve_subset(d, SubsetKind::ReplicatePairDiagonal);
  EXPECT_EQ(pairs.size(), 4);
  EXPECT_EQ(pairs.elements[2][1], d.flat_index(2, 2, 1));
  const auto off = resolve_subset(d, SubsetKind::OffDiagonalPair);
  EXPECT_EQ(off.size(), 4);
  EXPECT_EQ(off.elements[3][0], d.flat_index(3, 6, 0));
  EXPECT_EQ(off.elements[3][1], d.flat_index(3, 7, 0));
  EXPECT_TRUE(resolve_subset(CrossedDesign::full_crossing(3, 3), SubsetKind::ReplicatePairDiagonal).empty());
  EXPECT_EQ(parse_subset_kind(subset_kind_name(SubsetKind::OffDiagonalPair)), SubsetKind::OffDiagonalPair);
}

TEST(Subsets, ExplicitValidatesIndices) {
  const auto d = CrossedDesign::full_crossing(2, 2);
  EXPECT_EQ(explicit_subset(d, {0, 3}).mask(), 0b1001u);
  EXPECT_THROW(explicit_subset(d, {4}), std::out_of_range);
}
