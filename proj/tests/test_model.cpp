#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "sipldl/graph.hpp"
#include "sipldl/model.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace sipldl;
using ad::Var;
namespace fs = std::filesystem;

namespace {

Tensor2D relu(Tensor2D x) {
  for (double& v : x.data()) v = std::max(v, 0.0);
  return x;
}

}  // namespace

TEST(Encoder, OutputShapeAndPooling) {
  EncoderConfig cfg;
  cfg.in_channels = 2;
  cfg.length = 64;
  cfg.embed_dim = 12;
  EXPECT_EQ(pooled_length(cfg), 8u);
  Rng rng = make_rng(1);
  const EncoderParams p = init_encoder(cfg, rng);
  EXPECT_EQ(p.blocks.back().out_channels, 12u);
  EXPECT_EQ(p.proj_weight.rows(), 12u * 8u);
  const Var h = encode(testkit::random_matrix(5, 128, rng), p);
  EXPECT_EQ(h.rows(), 5u);
  EXPECT_EQ(h.cols(), 12u);
  EXPECT_TRUE(h.value().all_finite());
}

TEST(Encoder, RejectsWrongInputWidth) {
  Rng rng = make_rng(1);
  const EncoderParams p = init_encoder(EncoderConfig{}, rng);
  EXPECT_THROW(encode(Tensor2D(2, 63), p), Error);
}

TEST(Encoder, RejectsSeriesThatVanishUnderPooling) {
  EncoderConfig cfg;
  cfg.length = 4;
  Rng rng = make_rng(1);
  EXPECT_THROW(init_encoder(cfg, rng), Error);
}

TEST(Heads, GcnAndMlpHaveEqualParameterCounts) {
  const ModelParams m = init_model(EncoderConfig{}, 4, 3);
  EXPECT_EQ(parameter_count(m.gcn), 2u * 32u * 32u);
  EXPECT_EQ(parameter_count(m.gcn), parameter_count(m.mlp));
}

TEST(Heads, GcnMatchesTwoHopMessagePassing) {
  Rng rng = make_rng(5);
  const Tensor2D h = testkit::random_matrix(6, 3, rng);
  const GcnParams p = init_gcn(3, rng);
  const SimilarityMatrix a = build_similarity(Var::constant(h), 0.5);
  const Tensor2D z = gcn_project(Var::constant(h), a, p).value();

  const Tensor2D& A = a.alpha.value();
  const Tensor2D hidden = relu(testkit::naive_matmul(A, testkit::naive_matmul(h, p.w1.value())));
  const Tensor2D ref = testkit::unit_rows(testkit::naive_matmul(A, testkit::naive_matmul(hidden, p.w2.value())));
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z.data()[i], ref.data()[i], 1e-12);
}

TEST(Heads, GcnRejectsInvalidAdjacency) {
  Rng rng = make_rng(5);
  const GcnParams p = init_gcn(3, rng);
  const Var h = Var::constant(testkit::random_matrix(3, 3, rng));
  try {
    gcn_project(h, Var::constant(Tensor2D::identity(3)), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidGraph);
  }
}

TEST(Heads, OutputsAreUnitNorm) {
  Rng rng = make_rng(8);
  const Var h = Var::constant(testkit::random_matrix(5, 16, rng));
  const MlpHeadParams m = init_mlp_head(16, rng);
  const GcnParams g = init_gcn(16, rng);
  for (const Tensor2D& z : {mlp_project(h, m).value(), gcn_project(h, build_similarity(h, 0.2), g, true).value()})
    for (std::size_t r = 0; r < z.rows(); ++r) EXPECT_NEAR(kernels::row_norm(z, r), 1.0, 1e-12);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path path = fs::temp_directory_path() / "sipldl_model_roundtrip.ckpt";
  const ModelParams a = init_model(EncoderConfig{}, 3, 11);
  save_checkpoint(path.string(), a.named());
  ModelParams b = init_model(EncoderConfig{}, 3, 12);
  assign_checkpoint(b.named(), load_checkpoint(path.string()));
  const auto na = a.named(), nb = b.named();
  for (std::size_t k = 0; k < na.size(); ++k) EXPECT_EQ(na[k].second.value(), nb[k].second.value()) << na[k].first;
  fs::remove(path);
}

TEST(Checkpoint, ShapeMismatchAndMissingNamesAreSchemaErrors) {
  const fs::path path = fs::temp_directory_path() / "sipldl_model_schema.ckpt";
  const ModelParams a = init_model(EncoderConfig{}, 3, 1);
  save_checkpoint(path.string(), a.named_encoder());
  EncoderConfig wider;
  wider.embed_dim = 16;
  const ModelParams b = init_model(wider, 3, 1);
  auto kind = [&](const std::vector<std::pair<std::string, Var>>& params) {
    try {
      assign_checkpoint(params, load_checkpoint(path.string()));
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  EXPECT_EQ(kind(b.named_encoder()), ErrorKind::Schema);
  EXPECT_EQ(kind(a.named()), ErrorKind::Schema);
  fs::remove(path);
}

TEST(Checkpoint, RejectsForeignFiles) {
  const fs::path path = fs::temp_directory_path() / "sipldl_model_foreign.ckpt";
  std::ofstream(path) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(path.string()), Error);
  fs::remove(path);
}
