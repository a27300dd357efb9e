#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "sipldl/bounds.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace sipldl;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Schema;
}

/// Similarity matrix with unit diagonal, `same` within a class and `cross`
/// between classes.
Tensor2D block_gram(const std::vector<int>& labels, double same, double cross) {
  const std::size_t n = labels.size();
  Tensor2D g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = i == j ? 1.0 : (labels[i] == labels[j] ? same : cross);
  return g;
}

void perturb(Tensor2D& g, std::size_t i, std::size_t j, double d) {
  g(i, j) += d;
  g(j, i) += d;
}

}  // namespace

TEST(BoundSc, UniformConfigurationIsTight) {
  const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1});
  const Tensor2D z(4, 3, 1.0 / std::sqrt(3.0));
  const BoundReport r = bound_sc(z, idx, 0, 0.5);
  ASSERT_EQ(r.anchors.size(), 2u);
  for (const auto& a : r.anchors) {
    EXPECT_NEAR(a.bound, std::log(3.0), 1e-12);
    EXPECT_NEAR(a.actual, std::log(3.0), 1e-12);
    EXPECT_NEAR(a.first_term, 1.0, 0.0);
    EXPECT_NEAR(a.confrontation, 2.0, 1e-12);
  }
  EXPECT_NEAR(r.slack, 0.0, 1e-12);
  EXPECT_TRUE(r.equality.q1);
  EXPECT_TRUE(r.equality.q2);
}

TEST(BoundUc, UniformConfigurationIsTight) {
  const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1, 1});
  const Tensor2D z(6, 2, 1.0 / std::sqrt(2.0));
  const BoundReport r = bound_uc(z, idx, 1, 1.0);
  ASSERT_EQ(r.anchors.size(), 4u);
  for (const auto& a : r.anchors) {
    EXPECT_NEAR(a.first_term, 3.0, 1e-12);
    EXPECT_NEAR(a.confrontation, 2.0, 1e-12);
    EXPECT_NEAR(a.bound, std::log(5.0), 1e-12);
    EXPECT_NEAR(a.actual, std::log(5.0), 1e-12);
  }
  EXPECT_NEAR(r.slack, 0.0, 1e-12);
}

TEST(BoundSc, MatchesNaiveOracle) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng = make_rng(seed, {0xb0});
    const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1, 0, 2, 1});
    const Tensor2D z = testkit::random_unit_rows(10, 4, rng);
    for (int y : {0, 1, 2}) {
      const auto ref = testkit::naive_bound_sc(z, idx.labels, y, 0.3);
      const BoundReport r = bound_sc(z, idx, y, 0.3);
      EXPECT_NEAR(r.bound_total, ref.bound, 1e-10);
      EXPECT_NEAR(r.actual_total, ref.loss, 1e-10);
      EXPECT_GE(r.slack, -kSlackTolerance);
    }
  }
}

TEST(BoundUc, MatchesNaiveOracle) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng = make_rng(seed, {0xb1});
    const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1, 0, 2, 1});
    const Tensor2D z = testkit::random_unit_rows(10, 3, rng);
    for (int y : {0, 1, 2}) {
      const auto ref = testkit::naive_bound_uc(z, idx.labels, idx.partner, y, 0.7);
      const BoundReport r = bound_uc(z, idx, y, 0.7);
      EXPECT_NEAR(r.bound_total, ref.bound, 1e-10);
      EXPECT_NEAR(r.actual_total, ref.loss, 1e-10);
      EXPECT_GE(r.slack, -kSlackTolerance);
    }
  }
}

TEST(BoundSc, PairClassSlackIsJensenGapOfNegatives) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng = make_rng(seed, {0xb2});
    const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1, 1, 2});
    const Tensor2D z = testkit::random_unit_rows(8, 3, rng);
    const double tau = 0.5;
    const BoundReport r = bound_sc(z, idx, 0, tau);
    EXPECT_TRUE(r.equality.q1);
    double gap = 0.0;
    for (std::size_t i : {std::size_t{0}, std::size_t{4}}) {
      const std::size_t p = idx.partner[i];
      const double sp = testkit::dot(z, i, p);
      double exact = 0.0, mean_neg = 0.0;
      for (std::size_t k = 0; k < 8; ++k) {
        if (k == i || k == p) continue;
        exact += std::exp((testkit::dot(z, i, k) - sp) / tau);
        mean_neg += testkit::dot(z, i, k) / 6.0;
      }
      gap += std::log(1.0 + exact) - std::log(1.0 + 6.0 * std::exp((mean_neg - sp) / tau));
    }
    EXPECT_NEAR(r.slack, gap, 1e-12);
    EXPECT_GT(r.slack, 0.0);
  }
}

TEST(BoundUc, MaximalPartnerSimilarityLeavesSlack) {
  // class 0 = rows {0,1,4,5}; partners share 0.9, other same-class pairs 0.3.
  const auto idx = BatchIndexing::two_views(std::vector<int>{0, 0, 1, 1});
  Tensor2D g = block_gram(idx.labels, 0.3, 0.0);
  for (std::size_t i = 0; i < 4; ++i) perturb(g, i, i + 4, 0.6);
  const BoundReport r = bound_uc_from_similarity(g, idx, 0, 1.0);
  EXPECT_FALSE(r.equality.q1);
  EXPECT_TRUE(r.equality.q2);
  EXPECT_GT(r.slack, 1e-6);
}

TEST(Equality, IdenticalEmbeddingsSatisfyBoth) {
  const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1, 2});
  const EqualityCheck eq = check_equality_conditions_z(Tensor2D(6, 2, std::sqrt(0.5)), idx, 1);
  EXPECT_TRUE(eq.q1);
  EXPECT_TRUE(eq.q2);
  EXPECT_EQ(eq.q1_max_dev, 0.0);
  EXPECT_EQ(eq.q2_max_dev, 0.0);
}

TEST(Equality, PerturbedNegativeBreaksQ2) {
  const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1, 0});
  Tensor2D g = block_gram(idx.labels, 0.4, -0.2);
  perturb(g, 0, 1, 0.1);
  const EqualityCheck eq = check_equality_conditions(g, idx, 0);
  EXPECT_TRUE(eq.q1);
  EXPECT_FALSE(eq.q2);
  EXPECT_NEAR(eq.q2_max_dev, 0.1, 1e-12);
  const BoundReport r = bound_sc_from_similarity(g, idx, 0, 1.0);
  EXPECT_GT(r.slack, 1e-6);
}

TEST(Equality, SimplexConfigurationIsTight) {
  // Class centers at the vertices of a regular simplex; members coincide.
  const std::size_t classes = 3;
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const auto idx = BatchIndexing::two_views(labels);
  Tensor2D z(idx.size(), classes);
  const double off = -1.0 / static_cast<double>(classes);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t c = 0; c < classes; ++c) z(i, c) = (static_cast<int>(c) == idx.labels[i] ? 1.0 : 0.0) + off;
  z = testkit::unit_rows(z);
  EXPECT_NEAR(testkit::dot(z, 0, 1), -0.5, 1e-12);
  for (int y = 0; y < 3; ++y) {
    for (double tau : {0.2, 1.0}) {
      const BoundReport sc = bound_sc(z, idx, y, tau, 1e-12);
      EXPECT_TRUE(sc.equality.q1 && sc.equality.q2);
      EXPECT_LT(std::abs(sc.slack), kSlackTolerance);
      const BoundReport uc = bound_uc(z, idx, y, tau, 1e-12);
      EXPECT_LT(std::abs(uc.slack), kSlackTolerance);
    }
  }
}

TEST(Equality, EveryPerturbedEntryOpensSlack) {
  const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1, 0, 1});
  const Tensor2D base = block_gram(idx.labels, 0.5, -0.3);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      Tensor2D g = base;
      perturb(g, i, j, 0.1);
      const int y = idx.labels[i];
      const BoundReport r = bound_sc_from_similarity(g, idx, y, 1.0, 1e-12);
      EXPECT_FALSE(r.equality.q1 && r.equality.q2);
      EXPECT_GT(r.slack, 1e-6) << i << "," << j;
    }
  }
}

TEST(Bounds, TemperatureOneIsTheUntemperedForm) {
  Rng rng = make_rng(4);
  const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1, 1});
  const Tensor2D z = testkit::random_unit_rows(6, 3, rng);
  const BoundReport r = bound_sc(z, idx, 1, 1.0);
  for (const auto& a : r.anchors)
    EXPECT_NEAR(a.bound, std::log(3.0 + 2.0 * std::exp(a.mean_negative - a.mean_positive)), 1e-12);
}

TEST(Bounds, FuzzSuiteHasNoViolations) {
  const FuzzSummary s = run_bound_fuzz(FuzzConfig{});
  EXPECT_EQ(s.configurations, 1000u);
  EXPECT_EQ(s.violations, 0u);
  EXPECT_EQ(s.equality_inconsistencies, 0u);
  EXPECT_GE(s.worst_slack_sc, -kSlackTolerance);
  EXPECT_GE(s.worst_slack_uc, -kSlackTolerance);
  EXPECT_TRUE(s.ok());
}

TEST(Bounds, FuzzCasesAgreeWithNaiveOracle) {
  const FuzzConfig cfg;
  for (std::size_t k = 0; k < 50; ++k) {
    const FuzzCase fc = draw_fuzz_case(cfg, k);
    ASSERT_LE(fc.z.rows(), 16u);
    ASSERT_LE(fc.z.cols(), 8u);
    for (int y : fc.idx.classes()) {
      const auto sc = testkit::naive_bound_sc(fc.z, fc.idx.labels, y, fc.tau);
      const auto uc = testkit::naive_bound_uc(fc.z, fc.idx.labels, fc.idx.partner, y, fc.tau);
      EXPECT_NEAR(bound_sc(fc.z, fc.idx, y, fc.tau).bound_total, sc.bound, 1e-9);
      EXPECT_NEAR(bound_uc(fc.z, fc.idx, y, fc.tau).bound_total, uc.bound, 1e-9);
      EXPECT_GE(sc.loss - sc.bound, -kSlackTolerance);
      EXPECT_GE(uc.loss - uc.bound, -kSlackTolerance);
    }
  }
}

TEST(Bounds, FuzzConfigValidation) {
  FuzzConfig cfg;
  cfg.h_min = 0;
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::Parameter);
  cfg = {};
  cfg.taus = {0.2, -1.0};
  EXPECT_EQ(kind_of([&] { run_bound_fuzz(cfg); }), ErrorKind::Parameter);
}

TEST(Bounds, EmptyComplementIsUndefined) {
  const auto idx = BatchIndexing::two_views(std::vector<int>{3, 3});
  const Tensor2D z(4, 2, std::sqrt(0.5));
  EXPECT_EQ(kind_of([&] { bound_sc(z, idx, 3, 0.2); }), ErrorKind::BoundUndefined);
  EXPECT_EQ(kind_of([&] { bound_uc(z, idx, 3, 0.2); }), ErrorKind::BoundUndefined);
}

TEST(Bounds, SingletonClassIsDegenerate) {
  BatchIndexing idx = BatchIndexing::two_views(std::vector<int>{0, 1});
  const Tensor2D z(4, 2, std::sqrt(0.5));
  EXPECT_EQ(kind_of([&] { bound_sc(z, idx, 5, 0.2); }), ErrorKind::DegenerateClass);
}

TEST(Bounds, RequiresUnitRows) {
  const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1});
  EXPECT_EQ(kind_of([&] { bound_sc(Tensor2D(4, 2, 1.0), idx, 0, 0.2); }), ErrorKind::Normalization);
}

// ---- majority/minority analysis ----

TEST(ImbalanceGap, WorkedExample) {
  const ImbalanceAnalysis a = imbalance_gap(2.0, 0.5, 10);
  EXPECT_DOUBLE_EQ(a.gap_factor, 0.5);
  EXPECT_DOUBLE_EQ(a.lb_majority_arg, 25.0);
  EXPECT_DOUBLE_EQ(a.lb_minority_arg, 20.0);
  EXPECT_DOUBLE_EQ(a.lb_majority, std::log(25.0));
}

TEST(ImbalanceGap, ArgumentDifferenceIsGapTimesCount) {
  for (double r : {1.0, 2.0, 7.86, 24.97, 40.34})
    for (int k = 1; k <= 10; ++k) {
      const double e = 0.1 * k;
      const ImbalanceAnalysis a = imbalance_gap(r, e, 7);
      EXPECT_NEAR(a.lb_majority_arg - a.lb_minority_arg, 7.0 * (r - 1.0) * (1.0 - e), 1e-12);
      EXPECT_GE(a.gap_factor, 0.0);
      EXPECT_GE(a.lb_majority, a.lb_minority);
    }
}

TEST(ImbalanceGap, VanishesWhenBalancedOrUnlearned) {
  for (double e : {0.1, 0.5, 1.0}) EXPECT_EQ(imbalance_gap(1.0, e, 3).gap_factor, 0.0);
  for (double r : {1.0, 7.86, 40.34}) EXPECT_EQ(imbalance_gap(r, 1.0, 3).gap_factor, 0.0);
}

TEST(ImbalanceGap, Monotonicity) {
  const std::vector<double> rs{1.0, 1.5, 2.0, 7.86, 24.97, 40.34};
  for (int k = 1; k <= 10; ++k) {
    const double e = 0.1 * k;
    for (std::size_t i = 1; i < rs.size(); ++i)
      EXPECT_GE(imbalance_gap(rs[i], e, 1).gap_factor, imbalance_gap(rs[i - 1], e, 1).gap_factor);
  }
  for (double r : rs)
    for (int k = 2; k <= 10; ++k)
      EXPECT_LE(imbalance_gap(r, 0.1 * k, 1).gap_factor, imbalance_gap(r, 0.1 * (k - 1), 1).gap_factor);
}

TEST(ImbalanceGap, DomainErrors) {
  EXPECT_EQ(kind_of([] { imbalance_gap(0.5, 0.5, 1); }), ErrorKind::Parameter);
  EXPECT_EQ(kind_of([] { imbalance_gap(2.0, 0.0, 1); }), ErrorKind::Parameter);
  EXPECT_EQ(kind_of([] { imbalance_gap(2.0, 1.5, 1); }), ErrorKind::Parameter);
  EXPECT_EQ(kind_of([] { imbalance_gap(2.0, 0.5, 0); }), ErrorKind::Parameter);
}
