#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sipldl/augment.hpp"
#include "sipldl/autodiff.hpp"
#include "sipldl/data.hpp"
#include "sipldl/errors.hpp"
#include "sipldl/graph.hpp"
#include "sipldl/losses.hpp"
#include "sipldl/metrics.hpp"
#include "sipldl/model.hpp"
#include "sipldl/optim.hpp"
#include "sipldl/rng.hpp"

namespace sipldl {

/// Which projection head and loss terms a pretraining run uses.
enum class Variant { IdOnly, MidOnly, GcnId, GcnMid, MidId, GcnMidId, SipLdl };

inline constexpr Variant kAllVariants[] = {Variant::IdOnly, Variant::MidOnly,  Variant::GcnId, Variant::GcnMid,
                                           Variant::MidId,  Variant::GcnMidId, Variant::SipLdl};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::IdOnly: return "mlp_id";
    case Variant::MidOnly: return "mlp_mid";
    case Variant::GcnId: return "gcn_id";
    case Variant::GcnMid: return "gcn_mid";
    case Variant::MidId: return "mlp_mid_id";
    case Variant::GcnMidId: return "gcn_mid_id";
    case Variant::SipLdl: return "sip_ldl";
  }
  return "unknown";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  fail(ErrorKind::Parameter, "unknown variant '" + std::string(name) +
                                 "' (expected mlp_id, mlp_mid, gcn_id, gcn_mid, mlp_mid_id, gcn_mid_id, sip_ldl)");
}

struct VariantTraits {
  bool gcn_head = false;
  bool mid = false;
  bool id = false;
  bool cc = false;
};

inline VariantTraits traits(Variant v) {
  switch (v) {
    case Variant::IdOnly: return {false, false, true, false};
    case Variant::MidOnly: return {false, true, false, false};
    case Variant::GcnId: return {true, false, true, false};
    case Variant::GcnMid: return {true, true, false, false};
    case Variant::MidId: return {false, true, true, false};
    case Variant::GcnMidId: return {true, true, true, false};
    case Variant::SipLdl: return {true, true, true, true};
  }
  return {};
}

struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 1e-2;
  double weight_decay = 0.0;
};

struct TrainConfig {
  Variant variant = Variant::SipLdl;
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  AdamOptions adam{};
  double tau = 0.2;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double label_fraction = 0.10;
  std::uint64_t seed = 0;                        ///< seed of this run
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};  ///< seeds an experiment fans out over
  bool normalize_similarity = true;  ///< cosine similarity in the instance graph
  bool self_loop = false;            ///< add self-connections to the GCN adjacency
  bool mid_weighted = false;         ///< MID targets = detached alpha
  bool fixed_views = false;          ///< reuse epoch-0 augmentations and batch order every epoch
  AugmentParams augment{};
  EncoderConfig encoder{};
  ProbeConfig probe{};

  void validate() const {
    require(epochs >= 1 && batch_size >= 2, ErrorKind::Parameter, "epochs >= 1 and batch_size >= 2 required");
    require(tau > 0.0, ErrorKind::Parameter, "temperature must be positive");
    require(lambda1 >= 0.0 && lambda2 >= 0.0, ErrorKind::Parameter, "loss weights must be non-negative");
    require(label_fraction > 0.0 && label_fraction <= 1.0, ErrorKind::Parameter, "label fraction must lie in (0, 1]");
    require(probe.epochs >= 1 && probe.batch_size >= 1 && probe.lr >= 0.0, ErrorKind::Parameter,
            "invalid probe settings");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double loss = 0.0;      ///< mean of per-batch combined losses
  std::map<std::string, double> components;
  std::vector<double> class_mean_loss;     ///< per true class, mean per-anchor instance loss
  std::vector<std::size_t> class_anchors;  ///< anchors contributing to each mean
};

struct RunRecord {
  std::string variant;
  std::uint64_t seed = 0;
  TrainConfig config;
  std::vector<std::size_t> train_class_counts;
  std::vector<std::size_t> labeled_class_counts;
  std::vector<EpochRecord> history;
  std::optional<ClassificationMetrics> final_metrics;
};

struct PretrainResult {
  ModelParams params;
  RunRecord record;
};

namespace harness_detail {

inline std::vector<ad::Var> active_parameters(const ModelParams& m, const VariantTraits& t) {
  std::vector<ad::Var> out;
  for (const auto& [name, v] : m.named_encoder()) out.push_back(v);
  if (t.gcn_head) {
    out.push_back(m.gcn.w1);
    out.push_back(m.gcn.w2);
  } else {
    out.push_back(m.mlp.w1);
    out.push_back(m.mlp.w2);
  }
  if (t.cc) {
    out.push_back(m.classifier.weight);
    out.push_back(m.classifier.bias);
  }
  return out;
}

inline Tensor2D stack_views(const TimeSeriesBatch& a, const TimeSeriesBatch& b) {
  std::vector<double> data(a.values.vec());
  data.insert(data.end(), b.values.vec().begin(), b.values.vec().end());
  return Tensor2D(a.size() + b.size(), a.values.cols(), std::move(data));
}

}  // namespace harness_detail

/// Output of one forward pass over a two-view batch.
struct StepOutput {
  LossResult combined;
  std::vector<double> tracked_per_anchor;  ///< instance loss per row, for class tracking
};

/// Forward pass for one batch: weak view rows first, strong view rows second.
/// `labels` are the true labels (used for tracking and, through `label_mask`,
/// for the consistency term).
inline StepOutput forward_batch(const ModelParams& m, const TrainConfig& cfg, const Tensor2D& two_view_series,
                                std::span<const int> labels, const std::vector<bool>& label_mask) {
  const VariantTraits t = traits(cfg.variant);
  const std::size_t n2 = two_view_series.rows();
  require(n2 % 2 == 0 && labels.size() * 2 == n2 && label_mask.size() * 2 == n2, ErrorKind::Dimension,
          "two-view batch rows do not match label count");
  std::vector<int> view_labels(labels.begin(), labels.end());
  const BatchIndexing idx = BatchIndexing::two_views(view_labels);
  std::vector<bool> mask2(label_mask);
  mask2.insert(mask2.end(), label_mask.begin(), label_mask.end());

  const ad::Var h = encode(two_view_series, m.encoder);
  std::optional<SimilarityMatrix> alpha;
  if (t.gcn_head || (t.mid && t.id)) alpha = build_similarity(h, cfg.tau, cfg.normalize_similarity);
  const ad::Var z = t.gcn_head ? gcn_project(h, *alpha, m.gcn, cfg.self_loop) : mlp_project(h, m.mlp);

  LossComponents parts;
  const MidOptions mid_opts{cfg.mid_weighted, kLogFloor};
  if (t.mid) {
    if (t.id) {
      parts.mid = loss_mid(h, *alpha, idx.labels, mid_opts);
    } else {
      // Without an instance term the graph objective acts on the head output.
      const SimilarityMatrix az = build_similarity(z, cfg.tau, cfg.normalize_similarity);
      parts.mid = loss_mid(z, az, idx.labels, mid_opts);
    }
  }
  LossResult instance = loss_id(t.id ? z : ad::detach(z), idx, cfg.tau);
  if (t.id) parts.id = instance;
  if (t.cc) {
    const ad::Var lh = classify(h, m.classifier);
    const ad::Var lz = classify(z, m.classifier);
    parts.cc = loss_cc(h, z, lh, lz, idx.labels, mask2);
  }
  StepOutput out;
  out.combined = loss_combined(parts, cfg.lambda1, cfg.lambda2);
  out.tracked_per_anchor.reserve(n2);
  for (const auto& a : instance.report.per_anchor) out.tracked_per_anchor.push_back(a.value);
  return out;
}

/// Self-supervised pretraining (plus the consistency term for sip_ldl).
/// `train` must carry the label mask produced by split_labels when the
/// variant uses labels.
inline PretrainResult pretrain(const TrainConfig& cfg, const TimeSeriesBatch& train) {
  cfg.validate();
  train.validate();
  require(train.size() >= 2, ErrorKind::Parameter, "training data needs at least 2 samples");
  require(cfg.batch_size <= train.size(), ErrorKind::Parameter,
          "batch size " + std::to_string(cfg.batch_size) + " exceeds the " + std::to_string(train.size()) +
              " training samples");
  const VariantTraits t = traits(cfg.variant);
  EncoderConfig enc = cfg.encoder;
  enc.in_channels = train.channels;
  enc.length = train.length;

  PretrainResult res{init_model(enc, train.num_classes, cfg.seed), {}};
  RunRecord& rec = res.record;
  rec.variant = std::string(to_string(cfg.variant));
  rec.seed = cfg.seed;
  rec.config = cfg;
  rec.config.encoder = enc;
  rec.train_class_counts = train.class_counts();
  rec.labeled_class_counts.assign(train.num_classes, 0);
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.label_mask[i]) ++rec.labeled_class_counts[static_cast<std::size_t>(train.labels[i])];

  AdamOptions adam = cfg.adam;
  Adam opt(harness_detail::active_parameters(res.params, t), adam);
  const std::size_t n = train.size();
  const std::size_t classes = train.num_classes;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t epoch_key = cfg.fixed_views ? 1 : epoch;
    std::vector<std::size_t> order = iota_indices(n);
    Rng shuffle_rng = make_rng(cfg.seed, {0x53485546ULL, epoch_key});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::uint64_t aug_seed = derive_seed(cfg.seed, {0x41554721ULL, epoch_key});

    EpochRecord er;
    er.epoch = epoch;
    std::vector<double> class_sum(classes, 0.0);
    er.class_anchors.assign(classes, 0);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      if (stop - start < 2) continue;  // a single sample has no negatives
      std::span<const std::size_t> rows(order.data() + start, stop - start);
      const TimeSeriesBatch sub = train.subset(rows);
      const TimeSeriesBatch weak = weak_augment(sub, cfg.augment, aug_seed);
      const TimeSeriesBatch strong = strong_augment(sub, cfg.augment, aug_seed);
      StepOutput step =
          forward_batch(res.params, cfg, harness_detail::stack_views(weak, strong), sub.labels, sub.label_mask);
      const double total = step.combined.report.total;
      if (!std::isfinite(total))
        fail(ErrorKind::Divergence, "loss became non-finite in epoch " + std::to_string(epoch) +
                                        "; last good epoch " + std::to_string(epoch - 1));
      opt.zero_grad();
      ad::backward(step.combined.value);
      opt.step();

      ++batches;
      er.loss += total;
      for (const auto& [k, v] : step.combined.report.components) er.components[k] += v;
      const std::size_t half = sub.size();
      for (std::size_t r = 0; r < 2 * half; ++r) {
        const auto cls = static_cast<std::size_t>(sub.labels[r % half]);
        class_sum[cls] += step.tracked_per_anchor[r];
        ++er.class_anchors[cls];
      }
    }
    if (batches > 0) {
      er.loss /= static_cast<double>(batches);
      for (auto& [k, v] : er.components) v /= static_cast<double>(batches);
    }
    er.class_mean_loss.assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c)
      if (er.class_anchors[c] > 0) er.class_mean_loss[c] = class_sum[c] / static_cast<double>(er.class_anchors[c]);
    rec.history.push_back(std::move(er));
  }
  return res;
}

/// Encoder outputs for a whole dataset, computed in chunks without keeping
/// the graph. Reads parameter values only.
inline Tensor2D embed_dataset(const EncoderParams& enc, const TimeSeriesBatch& data, std::size_t chunk = 256) {
  Tensor2D out(data.size(), enc.config.embed_dim);
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t stop = std::min(data.size(), start + chunk);
    const std::vector<std::size_t> rows = [&] {
      std::vector<std::size_t> r(stop - start);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = start + i;
      return r;
    }();
    const ad::Var h = encode(data.subset(rows).values, enc);
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy(h.value().row(i).begin(), h.value().row(i).end(), out.row(start + i).begin());
  }
  return out;
}

struct ProbeResult {
  ClassificationMetrics metrics;
  std::vector<int> predictions;
};

/// Logistic regression on frozen features; features are standardized with
/// train-split statistics.
inline ProbeResult linear_probe_features(const Tensor2D& train_x, std::span<const int> train_y,
                                         const Tensor2D& test_x, std::span<const int> test_y,
                                         std::size_t num_classes, const ProbeConfig& cfg, std::uint64_t seed) {
  require(train_x.cols() == test_x.cols(), ErrorKind::Dimension, "train and test feature widths differ");
  require(train_x.rows() == train_y.size() && test_x.rows() == test_y.size(), ErrorKind::Dimension,
          "feature rows and labels disagree");
  const std::size_t d = train_x.cols();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t r = 0; r < train_x.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) mu[c] += train_x(r, c);
  for (double& v : mu) v /= std::max<double>(1.0, static_cast<double>(train_x.rows()));
  for (std::size_t r = 0; r < train_x.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) sd[c] += (train_x(r, c) - mu[c]) * (train_x(r, c) - mu[c]);
  for (double& v : sd) v = std::sqrt(v / std::max<double>(1.0, static_cast<double>(train_x.rows()))) + 1e-8;
  auto standardize = [&](const Tensor2D& x) {
    Tensor2D out = x;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < d; ++c) out(r, c) = (out(r, c) - mu[c]) / sd[c];
    return out;
  };
  const Tensor2D xtr = standardize(train_x);
  const Tensor2D xte = standardize(test_x);

  Rng init_rng = make_rng(seed, {0x50524f42ULL});
  ClassifierParams clf = init_classifier(d, num_classes, init_rng);
  Adam opt({clf.weight, clf.bias}, AdamOptions{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<int> labels(train_y.begin(), train_y.end());
  const std::size_t n = xtr.rows();
  for (std::size_t epoch = 0; epoch < cfg.epochs && n > 0; ++epoch) {
    std::vector<std::size_t> order = iota_indices(n);
    Rng rng = make_rng(seed, {0x50534855ULL, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + start, stop - start);
      const ad::Var x = ad::select_rows(ad::Var::constant(xtr), rows);
      std::vector<int> y(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];
      const std::vector<std::size_t> all = iota_indices(rows.size());
      const ad::Var loss = ad::mean(ad::cross_entropy_with_logits(classify(x, clf), y, all));
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
    }
  }

  ProbeResult res;
  const Tensor2D logits = classify(ad::Var::constant(xte), clf).value();
  res.predictions.resize(xte.rows());
  for (std::size_t r = 0; r < xte.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < num_classes; ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    res.predictions[r] = static_cast<int>(best);
  }
  std::vector<bool> present(num_classes, false);
  for (int y : train_y) present[static_cast<std::size_t>(y)] = true;
  res.metrics = compute_metrics(test_y, res.predictions, num_classes, present);
  return res;
}

/// Linear evaluation of a frozen encoder: the encoder's parameter values are
/// read, never written.
inline ProbeResult linear_probe(const EncoderParams& frozen, const TimeSeriesBatch& train,
                                const TimeSeriesBatch& test, const ProbeConfig& cfg, std::uint64_t seed) {
  require(train.num_classes == test.num_classes, ErrorKind::Dimension, "train/test class counts differ");
  const Tensor2D xtr = embed_dataset(frozen, train);
  const Tensor2D xte = embed_dataset(frozen, test);
  return linear_probe_features(xtr, train.labels, xte, test.labels, train.num_classes, cfg, seed);
}

struct EvaluatedRun {
  ModelParams params;
  RunRecord record;
};

/// Pretrains on `train` (labels hidden except a balanced subset when the
/// variant uses them), then probes the frozen encoder with the full train
/// labels and scores it on `test`.
inline EvaluatedRun run_and_evaluate(const TrainConfig& cfg, const TimeSeriesBatch& train,
                                     const TimeSeriesBatch& test) {
  const TimeSeriesBatch pretrain_data =
      traits(cfg.variant).cc ? split_labels(train, cfg.label_fraction, cfg.seed) : train;
  PretrainResult res = pretrain(cfg, pretrain_data);
  const ProbeResult probe = linear_probe(res.params.encoder, train, test, cfg.probe, cfg.seed);
  res.record.final_metrics = probe.metrics;
  return {std::move(res.params), std::move(res.record)};
}

struct ClassLossGap {
  std::size_t epoch = 0;
  double majority = 0.0;
  double minority = 0.0;
  double gap = 0.0;  ///< majority - minority
};

/// Majority/minority mean instance-loss series from a run record. Classes
/// default to the largest and smallest training classes.
inline std::vector<ClassLossGap> track_class_losses(const RunRecord& rec, std::optional<std::size_t> majority = {},
                                                    std::optional<std::size_t> minority = {}) {
  const auto& counts = rec.train_class_counts;
  require(!counts.empty(), ErrorKind::Parameter, "run record has no class counts");
  const std::size_t maj = majority.value_or(static_cast<std::size_t>(
      std::max_element(counts.begin(), counts.end()) - counts.begin()));
  // Last smallest class, so ties on a balanced set resolve to distinct classes.
  std::size_t min_cls = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] <= counts[min_cls]) min_cls = c;
  const std::size_t mnr = minority.value_or(min_cls);
  std::vector<ClassLossGap> out;
  for (const auto& e : rec.history) {
    require(maj < e.class_mean_loss.size() && mnr < e.class_mean_loss.size(), ErrorKind::Parameter,
            "run record lacks per-class loss series");
    out.push_back({e.epoch, e.class_mean_loss[maj], e.class_mean_loss[mnr],
                   e.class_mean_loss[maj] - e.class_mean_loss[mnr]});
  }
  return out;
}

}  // namespace sipldl
