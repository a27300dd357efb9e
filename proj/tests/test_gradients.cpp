// Finite-difference checks for every differentiable operation and loss.

#include <gtest/gtest.h>

#include "sipldl/graph.hpp"
#include "sipldl/losses.hpp"
#include "sipldl/model.hpp"
#include "support/gradcheck.hpp"

using namespace sipldl;
using namespace sipldl::testkit;
using ad::Var;
using Inputs = std::vector<Var>;

namespace {

constexpr double kTolerance = 1e-4;

class Gradients : public ::testing::TestWithParam<std::uint64_t> {
 protected:
  Rng rng() const { return make_rng(GetParam(), {0x4752}); }

  void check(const ScalarFn& f, const std::vector<Tensor2D>& inputs) const {
    const GradCheckResult r = grad_check(f, inputs);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
  }

  std::uint64_t seed() const { return GetParam(); }
};

std::vector<int> view_labels(std::size_t m, std::size_t classes, Rng& rng) {
  std::vector<int> y(m);
  for (std::size_t i = 0; i < m; ++i)
    y[i] = i < classes ? static_cast<int>(i) : static_cast<int>(rng() % classes);
  return y;
}

}  // namespace

TEST_P(Gradients, MatMul) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::matmul(x[0], x[1]), s); },
        {random_matrix(3, 4, g), random_matrix(4, 2, g)});
}

TEST_P(Gradients, AddSubMul) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::mul(ad::add(x[0], x[1]), ad::sub(x[0], x[1])), s); },
        {random_matrix(3, 3, g), random_matrix(3, 3, g)});
}

TEST_P(Gradients, AddRowBroadcast) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::add_row(x[0], x[1]), s); },
        {random_matrix(4, 3, g), random_matrix(1, 3, g)});
}

TEST_P(Gradients, ScaleAndTranspose) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::transpose(ad::scale(x[0], -2.5)), s); },
        {random_matrix(2, 5, g)});
}

TEST_P(Gradients, Relu) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::relu(x[0]), s); }, {random_away_from_zero(4, 4, g)});
}

TEST_P(Gradients, ExpAndLog) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::log(ad::add(ad::exp(x[0]), ad::exp(x[1]))), s); },
        {random_matrix(3, 3, g), random_matrix(3, 3, g)});
}

TEST_P(Gradients, SumAndMean) {
  Rng g = rng();
  check([](const Inputs& x) { return ad::add(ad::sum(ad::mul(x[0], x[0])), ad::mean(ad::exp(x[0]))); },
        {random_matrix(3, 4, g)});
}

TEST_P(Gradients, RowL2Normalize) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::row_l2_normalize(x[0]), s); },
        {random_matrix(5, 3, g)});
}

TEST_P(Gradients, SoftmaxRowsMasked) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::softmax_rows(x[0], ad::diagonal_mask(4), 0.3), s); },
        {random_matrix(4, 4, g)});
}

TEST_P(Gradients, SoftTargetNll) {
  Rng g = rng();
  Tensor2D t(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      if (r != c) t(r, c) = uniform(g);
  check([t](const Inputs& x) { return ad::sum(ad::soft_target_nll(x[0], t, ad::diagonal_mask(4))); },
        {random_matrix(4, 4, g)});
}

TEST_P(Gradients, WeightedLogNll) {
  Rng g = rng();
  Tensor2D t(3, 4);
  for (double& v : t.data()) v = uniform(g);
  check([t](const Inputs& x) {
    return ad::sum(ad::weighted_log_nll(ad::softmax_rows(x[0], ad::RowMask(3), 1.0), t, kLogFloor));
  },
        {random_matrix(3, 4, g)});
}

TEST_P(Gradients, CrossEntropyOnSelectedRows) {
  Rng g = rng();
  const std::vector<int> labels{0, 2, 1, 2, 0};
  const std::vector<std::size_t> rows{4, 1, 3};
  check([&](const Inputs& x) { return ad::mean(ad::cross_entropy_with_logits(x[0], labels, rows)); },
        {random_matrix(5, 3, g)});
}

TEST_P(Gradients, Conv1d) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::conv1d(x[0], x[1], x[2], {2, 7}), s); },
        {random_matrix(3, 14, g), random_matrix(3, 2 * 4, g), random_matrix(1, 3, g)});
}

TEST_P(Gradients, MaxPool1d) {
  Rng g = rng();
  check([s = seed()](const Inputs& x) { return weighted_sum(ad::max_pool1d(x[0], {2, 7}, 2), s); },
        {random_matrix(3, 14, g)});
}

TEST_P(Gradients, ConcatAndSelectRows) {
  Rng g = rng();
  const std::vector<std::size_t> sel{4, 0, 0, 2};
  check([&, s = seed()](const Inputs& x) { return weighted_sum(ad::select_rows(ad::concat_rows(x[0], x[1]), sel), s); },
        {random_matrix(2, 3, g), random_matrix(3, 3, g)});
}

// ---- losses ----

TEST_P(Gradients, SupervisedContrastiveLoss) {
  Rng g = rng();
  const auto idx = BatchIndexing::two_views(view_labels(4, 2, g));
  check([&](const Inputs& x) { return loss_sc(ad::row_l2_normalize(x[0]), idx, 0.5).value; },
        {random_matrix(8, 3, g)});
}

TEST_P(Gradients, UnsupervisedContrastiveLoss) {
  Rng g = rng();
  const auto idx = BatchIndexing::two_views(view_labels(4, 2, g));
  check([&](const Inputs& x) { return loss_uc(ad::row_l2_normalize(x[0]), idx, 0.2).value; },
        {random_matrix(8, 3, g)});
}

TEST_P(Gradients, InstanceGraphAndMid) {
  Rng g = rng();
  check([](const Inputs& x) { return loss_mid(x[0], build_similarity(x[0], 0.5)).value; }, {random_matrix(6, 3, g)});
}

TEST_P(Gradients, WeightedMid) {
  // Targets are a detached copy of alpha, so the reference freezes them at the base point.
  Rng g = rng();
  const Tensor2D base = random_matrix(5, 3, g);
  Tensor2D frozen = build_similarity(Var::constant(base), 0.5).alpha.value();
  for (std::size_t i = 0; i < frozen.rows(); ++i) frozen(i, i) = 0.0;
  const auto reference = [frozen](const Inputs& x) {
    return ad::mean(ad::weighted_log_nll(build_similarity(x[0], 0.5).alpha, frozen, kLogFloor));
  };
  check(reference, {base});

  const Var h = Var::leaf(base);
  const Var loss = loss_mid(h, build_similarity(h, 0.5), {}, {true, kLogFloor}).value;
  ad::backward(loss);
  const Var h_ref = Var::leaf(base);
  const Var ref = reference({h_ref});
  ad::backward(ref);
  EXPECT_NEAR(loss.scalar(), ref.scalar(), 1e-12);
  const Tensor2D ga = h.grad(), gb = h_ref.grad();
  for (std::size_t k = 0; k < ga.data().size(); ++k) EXPECT_NEAR(ga.data()[k], gb.data()[k], 1e-12);
}

TEST_P(Gradients, GcnProjectionThenInstanceLoss) {
  Rng g = rng();
  const auto idx = BatchIndexing::two_views(view_labels(3, 2, g));
  check(
      [&](const Inputs& x) {
        const SimilarityMatrix a = build_similarity(x[0], 0.5);
        return loss_id(gcn_project(x[0], a, GcnParams{x[1], x[2]}), idx, 0.2).value;
      },
      {random_matrix(6, 4, g), random_matrix(4, 4, g), random_matrix(4, 4, g)});
}

TEST_P(Gradients, GcnWithSelfLoops) {
  Rng g = rng();
  check(
      [s = seed()](const Inputs& x) {
        return weighted_sum(gcn_project(x[0], build_similarity(x[0], 0.3), GcnParams{x[1], x[2]}, true), s);
      },
      {random_matrix(5, 3, g), random_matrix(3, 3, g), random_matrix(3, 3, g)});
}

TEST_P(Gradients, ConsistencyClassificationLoss) {
  Rng g = rng();
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const std::vector<bool> mask{true, false, true, true, false, true};
  check(
      [&](const Inputs& x) {
        const ClassifierParams clf{x[2], x[3]};
        return loss_cc(x[0], x[1], classify(x[0], clf), classify(x[1], clf), labels, mask).value;
      },
      {random_matrix(6, 4, g), random_matrix(6, 4, g), random_matrix(4, 3, g), random_matrix(1, 3, g)});
}

TEST_P(Gradients, CombinedObjective) {
  Rng g = rng();
  const auto idx = BatchIndexing::two_views(std::vector<int>{0, 1, 1});
  const std::vector<bool> mask{true, false, true, true, false, true};
  check(
      [&](const Inputs& x) {
        const SimilarityMatrix a = build_similarity(x[0], 0.5);
        const Var z = gcn_project(x[0], a, GcnParams{x[1], x[2]});
        const ClassifierParams clf{x[3], x[4]};
        LossComponents parts;
        parts.mid = loss_mid(x[0], a, idx.labels);
        parts.id = loss_id(z, idx, 0.2);
        parts.cc = loss_cc(x[0], z, classify(x[0], clf), classify(z, clf), idx.labels, mask);
        return loss_combined(parts, 0.7, 1.3).value;
      },
      {random_matrix(6, 3, g), random_matrix(3, 3, g), random_matrix(3, 3, g), random_matrix(3, 2, g),
       random_matrix(1, 2, g)});
}

TEST_P(Gradients, EncoderEndToEnd) {
  EncoderConfig cfg;
  cfg.in_channels = 2;
  cfg.length = 9;
  cfg.conv_channels = {3, 2};
  cfg.kernel_widths = {3, 2};
  cfg.pool_width = 2;
  cfg.embed_dim = 2;
  Rng g = rng();
  const EncoderParams init = init_encoder(cfg, g);
  const Tensor2D series = random_matrix(3, 18, g);
  std::vector<Tensor2D> inputs;
  for (const auto& b : init.blocks) {
    inputs.push_back(b.weight.value());
    inputs.push_back(b.bias.value());
  }
  inputs.push_back(init.proj_weight.value());
  inputs.push_back(init.proj_bias.value());
  check(
      [init, series, s = seed()](const Inputs& x) {
        EncoderParams p = init;
        std::size_t k = 0;
        for (auto& blk : p.blocks) {
          blk.weight = x[k++];
          blk.bias = x[k++];
        }
        p.proj_weight = x[k];
        p.proj_bias = x[k + 1];
        return weighted_sum(encode(series, p), s);
      },
      inputs);
}

INSTANTIATE_TEST_SUITE_P(FiveSeeds, Gradients, ::testing::Values(1u, 2u, 3u, 4u, 5u));
