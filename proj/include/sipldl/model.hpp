#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "sipldl/autodiff.hpp"
#include "sipldl/errors.hpp"
#include "sipldl/graph.hpp"
#include "sipldl/rng.hpp"
#include "sipldl/timeseries.hpp"

namespace sipldl {

struct EncoderConfig {
  std::size_t in_channels = 1;
  std::size_t length = 64;
  std::vector<std::size_t> conv_channels{16, 32, 32};  ///< last entry is forced to embed_dim
  std::vector<std::size_t> kernel_widths{8, 8, 8};
  std::size_t pool_width = 2;
  std::size_t embed_dim = 32;
};

struct ConvBlock {
  ad::Var weight;  ///< out_channels x (in_channels * kernel)
  ad::Var bias;    ///< 1 x out_channels
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
};

/// Conv blocks (conv -> ReLU -> max-pool) followed by a linear map to h dims.
struct EncoderParams {
  EncoderConfig config;
  std::vector<ConvBlock> blocks;
  ad::Var proj_weight;  ///< (channels_last * pooled_length) x h
  ad::Var proj_bias;    ///< 1 x h
};

/// Two-layer graph projection; W1, W2 are h x h and bias-free.
struct GcnParams {
  ad::Var w1;
  ad::Var w2;
};

/// Two-layer MLP projection, same shapes as GcnParams.
struct MlpHeadParams {
  ad::Var w1;
  ad::Var w2;
};

struct ClassifierParams {
  ad::Var weight;  ///< h x C
  ad::Var bias;    ///< 1 x C
};

namespace model_detail {

inline Tensor2D uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor2D t(rows, cols);
  for (double& v : t.data()) v = uniform(rng, -bound, bound);
  return t;
}

/// He-uniform bound for a ReLU layer with the given fan-in.
inline double he_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

}  // namespace model_detail

/// Length of the series after every pooling stage.
inline std::size_t pooled_length(const EncoderConfig& cfg) {
  std::size_t len = cfg.length;
  for (std::size_t b = 0; b < cfg.conv_channels.size(); ++b) len /= cfg.pool_width;
  return len;
}

inline void validate(const EncoderConfig& cfg) {
  require(cfg.embed_dim > 0, ErrorKind::Parameter, "embedding dimension must be positive");
  require(!cfg.conv_channels.empty() && cfg.conv_channels.size() == cfg.kernel_widths.size(),
          ErrorKind::Parameter, "conv_channels and kernel_widths must be non-empty and equally long");
  require(cfg.in_channels > 0 && cfg.pool_width >= 1, ErrorKind::Parameter, "invalid channel or pool setting");
  require(pooled_length(cfg) >= 1, ErrorKind::Parameter,
          "series of length " + std::to_string(cfg.length) + " vanishes under pooling");
}

inline EncoderParams init_encoder(EncoderConfig cfg, Rng& rng) {
  cfg.conv_channels.back() = cfg.embed_dim;
  validate(cfg);
  EncoderParams p;
  p.config = cfg;
  std::size_t cin = cfg.in_channels;
  for (std::size_t b = 0; b < cfg.conv_channels.size(); ++b) {
    ConvBlock blk;
    blk.in_channels = cin;
    blk.out_channels = cfg.conv_channels[b];
    blk.kernel = cfg.kernel_widths[b];
    blk.weight = ad::Var::leaf(model_detail::uniform_matrix(blk.out_channels, cin * blk.kernel,
                                                            model_detail::he_bound(cin * blk.kernel), rng));
    blk.bias = ad::Var::leaf(Tensor2D(1, blk.out_channels));
    cin = blk.out_channels;
    p.blocks.push_back(std::move(blk));
  }
  const std::size_t flat = cin * pooled_length(cfg);
  p.proj_weight = ad::Var::leaf(model_detail::uniform_matrix(flat, cfg.embed_dim,
                                                             std::sqrt(3.0 / static_cast<double>(flat)), rng));
  p.proj_bias = ad::Var::leaf(Tensor2D(1, cfg.embed_dim));
  return p;
}

/// N x (C*L) channel-major series -> N x h embeddings (not normalized).
inline ad::Var encode(const Tensor2D& series, const EncoderParams& p) {
  const auto& cfg = p.config;
  require(series.cols() == cfg.in_channels * cfg.length, ErrorKind::Dimension,
          "encoder expects " + std::to_string(cfg.in_channels) + "x" + std::to_string(cfg.length) +
              " series, got rows of width " + std::to_string(series.cols()));
  ad::Var x = ad::Var::constant(series);
  ad::SeriesShape shape{cfg.in_channels, cfg.length};
  for (const ConvBlock& blk : p.blocks) {
    x = ad::relu(ad::conv1d(x, blk.weight, blk.bias, shape));
    shape.channels = blk.out_channels;
    x = ad::max_pool1d(x, shape, cfg.pool_width);
    shape.length /= cfg.pool_width;
  }
  return ad::add_row(ad::matmul(x, p.proj_weight), p.proj_bias);
}

inline ad::Var encode(const TimeSeriesBatch& batch, const EncoderParams& p) {
  require(batch.channels == p.config.in_channels && batch.length == p.config.length, ErrorKind::Dimension,
          "batch of " + std::to_string(batch.channels) + "x" + std::to_string(batch.length) +
              " series does not fit encoder input " + std::to_string(p.config.in_channels) + "x" +
              std::to_string(p.config.length));
  return encode(batch.values, p);
}

inline GcnParams init_gcn(std::size_t h, Rng& rng) {
  return {ad::Var::leaf(model_detail::uniform_matrix(h, h, model_detail::he_bound(h), rng)),
          ad::Var::leaf(model_detail::uniform_matrix(h, h, model_detail::he_bound(h), rng))};
}

inline MlpHeadParams init_mlp_head(std::size_t h, Rng& rng) {
  return {ad::Var::leaf(model_detail::uniform_matrix(h, h, model_detail::he_bound(h), rng)),
          ad::Var::leaf(model_detail::uniform_matrix(h, h, model_detail::he_bound(h), rng))};
}

inline ClassifierParams init_classifier(std::size_t h, std::size_t classes, Rng& rng) {
  return {ad::Var::leaf(model_detail::uniform_matrix(h, classes, 1.0 / std::sqrt(static_cast<double>(h)), rng)),
          ad::Var::leaf(Tensor2D(1, classes))};
}

/// z_i = normalize( sum_j a_ij * relu( sum_k a_jk h_k W1 ) W2 ), with the same
/// adjacency on both hops. Differentiable through h, alpha and the weights.
inline ad::Var gcn_project(const ad::Var& h, const ad::Var& alpha, const GcnParams& p, bool self_loop = false) {
  require(alpha.rows() == h.rows() && alpha.cols() == h.rows(), ErrorKind::Dimension,
          "adjacency " + alpha.value().shape_string() + " does not match " + std::to_string(h.rows()) + " nodes");
  require(p.w1.rows() == h.cols() && p.w1.cols() == h.cols() && p.w2.rows() == h.cols() &&
              p.w2.cols() == h.cols(),
          ErrorKind::Dimension, "GCN weights must be " + std::to_string(h.cols()) + " square");
  validate_instance_graph(alpha.value());
  const ad::Var adj = self_loop ? with_self_loops(alpha) : alpha;
  const ad::Var hidden = ad::relu(ad::matmul(adj, ad::matmul(h, p.w1)));
  return ad::row_l2_normalize(ad::matmul(adj, ad::matmul(hidden, p.w2)));
}

inline ad::Var gcn_project(const ad::Var& h, const SimilarityMatrix& alpha, const GcnParams& p,
                           bool self_loop = false) {
  return gcn_project(h, alpha.alpha, p, self_loop);
}

/// z_i = normalize( relu(h_i W1) W2 ).
inline ad::Var mlp_project(const ad::Var& h, const MlpHeadParams& p) {
  require(p.w1.rows() == h.cols(), ErrorKind::Dimension,
          "MLP head expects " + std::to_string(p.w1.rows()) + " inputs, got " + std::to_string(h.cols()));
  return ad::row_l2_normalize(ad::matmul(ad::relu(ad::matmul(h, p.w1)), p.w2));
}

/// logits = e W + b
inline ad::Var classify(const ad::Var& e, const ClassifierParams& p) {
  require(e.cols() == p.weight.rows(), ErrorKind::Dimension,
          "classifier expects " + std::to_string(p.weight.rows()) + " features, got " + std::to_string(e.cols()));
  return ad::add_row(ad::matmul(e, p.weight), p.bias);
}

/// Every trainable tensor of the model, named for checkpoints.
struct ModelParams {
  EncoderParams encoder;
  GcnParams gcn;
  MlpHeadParams mlp;
  ClassifierParams classifier;

  std::vector<std::pair<std::string, ad::Var>> named_encoder() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    for (std::size_t b = 0; b < encoder.blocks.size(); ++b) {
      out.emplace_back("encoder.conv" + std::to_string(b) + ".weight", encoder.blocks[b].weight);
      out.emplace_back("encoder.conv" + std::to_string(b) + ".bias", encoder.blocks[b].bias);
    }
    out.emplace_back("encoder.proj.weight", encoder.proj_weight);
    out.emplace_back("encoder.proj.bias", encoder.proj_bias);
    return out;
  }

  std::vector<std::pair<std::string, ad::Var>> named() const {
    auto out = named_encoder();
    out.emplace_back("gcn.w1", gcn.w1);
    out.emplace_back("gcn.w2", gcn.w2);
    out.emplace_back("mlp.w1", mlp.w1);
    out.emplace_back("mlp.w2", mlp.w2);
    out.emplace_back("classifier.weight", classifier.weight);
    out.emplace_back("classifier.bias", classifier.bias);
    return out;
  }
};

inline ModelParams init_model(const EncoderConfig& cfg, std::size_t num_classes, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x494e4954ULL});
  ModelParams m;
  m.encoder = init_encoder(cfg, rng);
  m.gcn = init_gcn(cfg.embed_dim, rng);
  m.mlp = init_mlp_head(cfg.embed_dim, rng);
  m.classifier = init_classifier(cfg.embed_dim, num_classes, rng);
  return m;
}

inline std::size_t parameter_count(const GcnParams& p) { return p.w1.value().size() + p.w2.value().size(); }
inline std::size_t parameter_count(const MlpHeadParams& p) { return p.w1.value().size() + p.w2.value().size(); }

// Checkpoint container (all integers little-endian):
//   magic "SIPLDLC1" | u32 count | count x { u32 name_len | name | u64 rows | u64 cols | rows*cols f64 }
namespace checkpoint_detail {

inline constexpr char kMagic[8] = {'S', 'I', 'P', 'L', 'D', 'L', 'C', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    static_assert(sizeof(T) == 8);
    std::memcpy(&bits, &v, 8);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  require(static_cast<bool>(in), ErrorKind::Parse, path + ": truncated checkpoint");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_floating_point_v<T>) {
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace checkpoint_detail

inline void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, ad::Var>>& params) {
  using namespace checkpoint_detail;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path + " for writing");
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, var] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, var.rows());
    put<std::uint64_t>(out, var.cols());
    for (double v : var.value().data()) put<double>(out, v);
  }
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path);
}

inline std::map<std::string, Tensor2D> load_checkpoint(const std::string& path) {
  using namespace checkpoint_detail;
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  require(static_cast<bool>(in) && std::memcmp(magic, kMagic, sizeof magic) == 0, ErrorKind::Parse,
          path + ": not a checkpoint file");
  const auto count = get<std::uint32_t>(in, path);
  std::map<std::string, Tensor2D> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    require(static_cast<bool>(in), ErrorKind::Parse, path + ": truncated checkpoint");
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    std::vector<double> data(rows * cols);
    for (double& v : data) v = get<double>(in, path);
    out.emplace(std::move(name), Tensor2D(rows, cols, std::move(data)));
  }
  return out;
}

/// Copy checkpoint tensors into matching parameters. Every parameter must be
/// present with the right shape.
inline void assign_checkpoint(const std::vector<std::pair<std::string, ad::Var>>& params,
                              const std::map<std::string, Tensor2D>& values) {
  for (auto [name, var] : params) {
    auto it = values.find(name);
    require(it != values.end(), ErrorKind::Schema, "checkpoint lacks parameter '" + name + "'");
    require(it->second.same_shape(var.value()), ErrorKind::Schema,
            "checkpoint parameter '" + name + "' has shape " + it->second.shape_string() + ", expected " +
                var.value().shape_string());
    var.set_value(it->second);
  }
}

}  // namespace sipldl
