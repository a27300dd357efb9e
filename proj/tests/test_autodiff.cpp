#include <cmath>
#include <functional>
#include <limits>

#include <gtest/gtest.h>

#include "sipldl/autodiff.hpp"
#include "support/gradcheck.hpp"

using namespace sipldl;
using ad::Var;

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

}  // namespace

TEST(Autodiff, SharedSubexpressionAccumulates) {
  // f(x) = sum(x * x + x) -> df/dx = 2x + 1
  const Var x = Var::leaf(Tensor2D::from_rows({{1.0, -2.0}, {0.5, 3.0}}));
  const Var y = ad::sum(ad::add(ad::mul(x, x), x));
  ad::backward(y);
  const Tensor2D g = x.grad();
  EXPECT_DOUBLE_EQ(g(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(g(0, 1), -3.0);
  EXPECT_DOUBLE_EQ(g(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(g(1, 1), 7.0);
}

TEST(Autodiff, ConstantsCarryNoGraph) {
  const Var c = Var::constant(Tensor2D(2, 2, 1.0));
  const Var y = ad::sum(ad::mul(c, c));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
  ad::backward(y);
  EXPECT_EQ(c.grad(), Tensor2D(2, 2));
}

TEST(Autodiff, DetachStopsGradient) {
  const Var x = Var::leaf(Tensor2D(1, 3, 2.0));
  const Var y = ad::sum(ad::mul(x, ad::detach(x)));
  ad::backward(y);
  const Tensor2D grad = x.grad();
  for (double g : grad.data()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Autodiff, BackwardNeedsScalar) {
  const Var x = Var::leaf(Tensor2D(2, 2, 1.0));
  EXPECT_EQ(kind_of([&] { ad::backward(x); }), ErrorKind::Dimension);
}

TEST(Autodiff, LogOfNonPositiveIsDegenerate) {
  const Var x = Var::leaf(Tensor2D::from_rows({{1.0, 0.0}}));
  EXPECT_EQ(kind_of([&] { ad::log(x); }), ErrorKind::DegenerateInput);
}

TEST(Autodiff, NormalizeZeroRowNamesTheRow) {
  const Var x = Var::leaf(Tensor2D::from_rows({{1.0, 1.0}, {0.0, 0.0}}));
  try {
    ad::row_l2_normalize(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateInput);
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(Autodiff, NormalizeProducesUnitRows) {
  const Var x = Var::leaf(Tensor2D::from_rows({{3.0, 4.0}, {-1.0, 0.0}}));
  const Tensor2D y = ad::row_l2_normalize(x).value();
  EXPECT_DOUBLE_EQ(y(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.8);
  EXPECT_DOUBLE_EQ(y(1, 0), -1.0);
}

TEST(Autodiff, SoftmaxRowsRespectsMaskAndTemperature) {
  const Var x = Var::constant(Tensor2D::from_rows({{0.0, 1.0, 2.0}, {5.0, 5.0, 5.0}, {1.0, 0.0, 0.0}}));
  const Tensor2D p = ad::softmax_rows(x, ad::diagonal_mask(3), 0.5).value();
  EXPECT_EQ(p(0, 0), 0.0);
  EXPECT_NEAR(p(0, 1), std::exp(2.0) / (std::exp(2.0) + std::exp(4.0)), 1e-15);
  EXPECT_NEAR(p(1, 0), 0.5, 1e-15);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += p(r, c);
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
  EXPECT_EQ(kind_of([&] { ad::softmax_rows(x, ad::diagonal_mask(3), 0.0); }), ErrorKind::Parameter);
}

TEST(Autodiff, SoftmaxIsStableForLargeLogits) {
  const Var x = Var::constant(Tensor2D::from_rows({{1000.0, 999.0}}));
  const Tensor2D p = ad::softmax_rows(x, ad::RowMask(1), 1.0).value();
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Autodiff, Conv1dMatchesDirectSum) {
  // One input channel, two output channels, kernel 3, left pad 1.
  const Var x = Var::constant(Tensor2D::from_rows({{1.0, 2.0, 3.0, 4.0}}));
  const Var w = Var::constant(Tensor2D::from_rows({{1.0, 0.0, -1.0}, {0.5, 0.5, 0.5}}));
  const Var b = Var::constant(Tensor2D::from_rows({{0.0, 1.0}}));
  const Tensor2D y = ad::conv1d(x, w, b, {1, 4}).value();
  ASSERT_EQ(y.cols(), 8u);
  // channel 0: x[t-1] - x[t+1] with zero padding
  const double c0[] = {0.0 - 2.0, 1.0 - 3.0, 2.0 - 4.0, 3.0 - 0.0};
  const double c1[] = {1.0 + 0.5 * 3.0, 1.0 + 0.5 * 6.0, 1.0 + 0.5 * 9.0, 1.0 + 0.5 * 7.0};
  for (int t = 0; t < 4; ++t) {
    EXPECT_DOUBLE_EQ(y(0, static_cast<std::size_t>(t)), c0[t]);
    EXPECT_DOUBLE_EQ(y(0, 4 + static_cast<std::size_t>(t)), c1[t]);
  }
}

TEST(Autodiff, MaxPoolDropsRemainder) {
  const Var x = Var::constant(Tensor2D::from_rows({{1.0, 5.0, 2.0, 0.0, 9.0}}));
  const Tensor2D y = ad::max_pool1d(x, {1, 5}, 2).value();
  ASSERT_EQ(y.cols(), 2u);
  EXPECT_EQ(y(0, 0), 5.0);
  EXPECT_EQ(y(0, 1), 2.0);
}

TEST(Autodiff, CrossEntropyMatchesDefinition) {
  const Var logits = Var::constant(Tensor2D::from_rows({{2.0, 0.0, -1.0}, {0.0, 0.0, 0.0}}));
  const std::vector<int> labels{0, 2};
  const std::vector<std::size_t> rows{0, 1};
  const Tensor2D ce = ad::cross_entropy_with_logits(logits, labels, rows).value();
  EXPECT_NEAR(ce(0, 0), std::log(std::exp(2.0) + 1.0 + std::exp(-1.0)) - 2.0, 1e-14);
  EXPECT_NEAR(ce(1, 0), std::log(3.0), 1e-14);
}

TEST(Autodiff, WeightedLogNllCountsClampedEntries) {
  const Var p = Var::leaf(Tensor2D::from_rows({{1e-320, 1.0}}));
  std::size_t clamped = 0;
  const Var out = ad::weighted_log_nll(p, Tensor2D::from_rows({{1.0, 0.0}}), 1e-300, &clamped);
  EXPECT_EQ(clamped, 1u);
  EXPECT_NEAR(out.value()(0, 0), -std::log(1e-300), 1e-9);
  ad::backward(ad::sum(out));
  EXPECT_EQ(p.grad()(0, 0), 0.0);
}

TEST(Autodiff, ReluPropagatesNan) {
  Tensor2D t(1, 3, -1.0);
  t(0, 1) = std::numeric_limits<double>::quiet_NaN();
  const Var y = ad::relu(Var::constant(t));
  EXPECT_EQ(y.value()(0, 0), 0.0);
  EXPECT_TRUE(std::isnan(y.value()(0, 1)));
}
