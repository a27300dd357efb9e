#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sipldl/autodiff.hpp"
#include "sipldl/errors.hpp"
#include "sipldl/graph.hpp"

namespace sipldl {

inline constexpr int kUnknownLabel = -1;

/// Batch membership for the contrastive losses: a label per row (or
/// kUnknownLabel) and the positive-pair map linking each row to its
/// augmentation partner.
struct BatchIndexing {
  std::vector<int> labels;
  std::vector<std::size_t> partner;

  /// 2N rows laid out as view A (rows 0..N-1) then view B; row i pairs with
  /// row i+N.
  static BatchIndexing two_views(std::span<const int> view_labels) {
    const std::size_t n = view_labels.size();
    BatchIndexing idx;
    idx.labels.reserve(2 * n);
    idx.labels.insert(idx.labels.end(), view_labels.begin(), view_labels.end());
    idx.labels.insert(idx.labels.end(), view_labels.begin(), view_labels.end());
    idx.partner.resize(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      idx.partner[i] = i + n;
      idx.partner[i + n] = i;
    }
    return idx;
  }

  std::size_t size() const noexcept { return labels.size(); }

  /// The pair map must be a fixed-point-free involution.
  void validate_pairs() const {
    require(partner.size() == labels.size(), ErrorKind::Dimension,
            "positive-pair map has " + std::to_string(partner.size()) + " entries for " +
                std::to_string(labels.size()) + " rows");
    for (std::size_t i = 0; i < partner.size(); ++i) {
      const std::size_t j = partner[i];
      require(j < partner.size() && j != i && partner[j] == i, ErrorKind::Parameter,
              "positive-pair map is not a fixed-point-free involution at row " + std::to_string(i));
    }
  }

  std::vector<std::size_t> members(int y) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == y) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> complement(int y) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] != y) out.push_back(i);
    return out;
  }

  std::vector<int> classes() const {
    std::set<int> s;
    for (int y : labels)
      if (y != kUnknownLabel) s.insert(y);
    return {s.begin(), s.end()};
  }
};

struct AnchorLoss {
  std::size_t index = 0;
  int cls = kUnknownLabel;
  double value = 0.0;
};

/// `total` is the batch objective (mean over anchors for the contrastive
/// terms); per-anchor values support the class-specific batch-wise sums.
struct LossReport {
  double total = 0.0;
  std::vector<AnchorLoss> per_anchor;
  std::map<std::string, double> components;
  std::map<std::string, bool> flags;
  std::size_t clamp_count = 0;

  /// Sum of per-anchor losses over anchors of class y.
  double class_sum(int y) const {
    double s = 0.0;
    for (const auto& a : per_anchor)
      if (a.cls == y) s += a.value;
    return s;
  }

  std::map<int, double> class_sums() const {
    std::map<int, double> out;
    for (const auto& a : per_anchor) out[a.cls] += a.value;
    return out;
  }
};

struct LossResult {
  ad::Var value;  ///< differentiable 1x1 total
  LossReport report;
};

inline constexpr double kUnitNormTolerance = 1e-6;
inline constexpr double kLogFloor = 1e-300;

namespace loss_detail {

inline void require_unit_rows(const Tensor2D& z, const char* what) {
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double norm = kernels::row_norm(z, r);
    require(std::abs(norm - 1.0) <= kUnitNormTolerance, ErrorKind::Normalization,
            std::string(what) + ": row " + std::to_string(r) + " has norm " + std::to_string(norm) +
                ", expected unit norm");
  }
}

inline void require_temperature(double tau) {
  require(tau > 0.0 && std::isfinite(tau), ErrorKind::Parameter,
          "temperature must be positive, got " + std::to_string(tau));
}

inline LossResult finish(const ad::Var& per_anchor, std::span<const int> labels) {
  LossResult out;
  out.value = ad::mean(per_anchor);
  out.report.total = out.value.scalar();
  out.report.per_anchor.reserve(per_anchor.rows());
  for (std::size_t i = 0; i < per_anchor.rows(); ++i)
    out.report.per_anchor.push_back({i, i < labels.size() ? labels[i] : kUnknownLabel, per_anchor.value()(i, 0)});
  return out;
}

inline Tensor2D partner_targets(const BatchIndexing& idx) {
  const std::size_t n = idx.size();
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, idx.partner[i]) = 1.0;
  return t;
}

inline Tensor2D same_class_targets(const BatchIndexing& idx) {
  const std::size_t n = idx.size();
  std::map<int, std::size_t> counts;
  for (int y : idx.labels) {
    require(y != kUnknownLabel, ErrorKind::Parameter, "supervised contrastive loss needs every label");
    ++counts[y];
  }
  std::string singletons;
  for (const auto& [y, c] : counts)
    if (c < 2) singletons += (singletons.empty() ? "" : ",") + std::to_string(y);
  require(singletons.empty(), ErrorKind::DegenerateClass,
          "classes with a single member in the batch: " + singletons);
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 1.0 / static_cast<double>(counts[idx.labels[i]] - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && idx.labels[j] == idx.labels[i]) t(i, j) = w;
  }
  return t;
}

}  // namespace loss_detail

/// Single-positive InfoNCE from a similarity matrix (inner products, not yet
/// divided by tau). Per anchor: -log softmax_{k != i}(s_ik / tau) at the partner.
inline LossResult loss_uc_from_similarity(const ad::Var& sims, const BatchIndexing& idx, double tau) {
  loss_detail::require_temperature(tau);
  idx.validate_pairs();
  require(sims.rows() == idx.size() && sims.cols() == idx.size(), ErrorKind::Dimension,
          "similarity " + sims.value().shape_string() + " for " + std::to_string(idx.size()) + " rows");
  const ad::Var per = ad::soft_target_nll(ad::scale(sims, 1.0 / tau), loss_detail::partner_targets(idx),
                                          ad::diagonal_mask(idx.size()));
  return loss_detail::finish(per, idx.labels);
}

/// Supervised contrastive loss from a similarity matrix: per anchor, the
/// average over same-class j != i of -log softmax_{k != i}(s_ik / tau) at j.
inline LossResult loss_sc_from_similarity(const ad::Var& sims, const BatchIndexing& idx, double tau) {
  loss_detail::require_temperature(tau);
  require(sims.rows() == idx.size() && sims.cols() == idx.size(), ErrorKind::Dimension,
          "similarity " + sims.value().shape_string() + " for " + std::to_string(idx.size()) + " rows");
  const ad::Var per = ad::soft_target_nll(ad::scale(sims, 1.0 / tau), loss_detail::same_class_targets(idx),
                                          ad::diagonal_mask(idx.size()));
  return loss_detail::finish(per, idx.labels);
}

/// Unsupervised (instance) contrastive loss over unit-norm rows z.
inline LossResult loss_uc(const ad::Var& z, const BatchIndexing& idx, double tau) {
  loss_detail::require_unit_rows(z.value(), "loss_uc");
  return loss_uc_from_similarity(ad::matmul(z, ad::transpose(z)), idx, tau);
}

/// Supervised contrastive loss over unit-norm rows z; every class in the
/// batch needs at least two members.
inline LossResult loss_sc(const ad::Var& z, const BatchIndexing& idx, double tau) {
  loss_detail::require_unit_rows(z.value(), "loss_sc");
  return loss_sc_from_similarity(ad::matmul(z, ad::transpose(z)), idx, tau);
}

/// Single-instance discrimination after projection: same contract as loss_uc.
inline LossResult loss_id(const ad::Var& z, const BatchIndexing& idx, double tau) { return loss_uc(z, idx, tau); }

struct MidOptions {
  bool weighted = false;  ///< targets = detached alpha instead of uniform 1/(n-1)
  double floor = kLogFloor;
};

/// Multiple-instances discrimination over the instance graph:
///   per anchor  -1/(n-1) * sum_{j != i} log alpha_ij
/// Entries below `floor` are clamped before the log and counted.
inline LossResult loss_mid(const ad::Var& h, const SimilarityMatrix& alpha, std::span<const int> labels = {},
                           const MidOptions& opts = {}) {
  const std::size_t n = alpha.size();
  require(h.rows() == n, ErrorKind::Dimension,
          "instance graph over " + std::to_string(n) + " nodes for " + std::to_string(h.rows()) + " embeddings");
  require(n >= 2, ErrorKind::BatchTooSmall, "MID needs at least 2 samples");
  Tensor2D targets(n, n);
  if (opts.weighted) {
    targets = alpha.alpha.value();
    for (std::size_t i = 0; i < n; ++i) targets(i, i) = 0.0;
  } else {
    const double w = 1.0 / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) targets(i, j) = w;
  }
  std::size_t clamped = 0;
  const ad::Var per = ad::weighted_log_nll(alpha.alpha, targets, opts.floor, &clamped);
  LossResult out = loss_detail::finish(per, labels);
  out.report.clamp_count = clamped;
  out.report.flags["underflow_clamped"] = clamped > 0;
  return out;
}

/// Consistency classification: cross-entropy of the shared classifier on the
/// labeled rows, once on pre-projection logits and once on post-projection
/// logits. Each head contributes the mean over labeled rows.
inline LossResult loss_cc(const ad::Var& h, const ad::Var& z, const ad::Var& logits_h, const ad::Var& logits_z,
                          std::span<const int> labels, const std::vector<bool>& label_mask) {
  const std::size_t n = labels.size();
  require(h.rows() == n && z.rows() == n && logits_h.rows() == n && logits_z.rows() == n &&
              label_mask.size() == n,
          ErrorKind::Dimension, "consistency loss inputs disagree on the number of rows");
  require(logits_h.cols() == logits_z.cols(), ErrorKind::Dimension, "logit widths differ between heads");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (label_mask[i]) rows.push_back(i);

  LossResult out;
  if (rows.empty()) {
    out.value = ad::Var::constant(Tensor2D(1, 1, 0.0));
    out.report.flags["no_labels"] = true;
    out.report.components = {{"CC_h", 0.0}, {"CC_z", 0.0}};
    return out;
  }
  const ad::Var ce_h = ad::cross_entropy_with_logits(logits_h, labels, rows);
  const ad::Var ce_z = ad::cross_entropy_with_logits(logits_z, labels, rows);
  const ad::Var mh = ad::mean(ce_h);
  const ad::Var mz = ad::mean(ce_z);
  out.value = ad::add(mh, mz);
  out.report.total = out.value.scalar();
  out.report.flags["no_labels"] = false;
  out.report.components = {{"CC_h", mh.scalar()}, {"CC_z", mz.scalar()}};
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.report.per_anchor.push_back({rows[k], labels[rows[k]], ce_h.value()(k, 0) + ce_z.value()(k, 0)});
  return out;
}

struct LossComponents {
  std::optional<LossResult> mid;
  std::optional<LossResult> id;
  std::optional<LossResult> cc;
};

/// lambda1 * (MID + ID) + lambda2 * CC over whichever components are present.
inline LossResult loss_combined(const LossComponents& parts, double lambda1, double lambda2) {
  require(lambda1 >= 0.0 && lambda2 >= 0.0, ErrorKind::Parameter, "loss weights must be non-negative");
  LossResult out;
  std::optional<ad::Var> acc;
  auto accumulate = [&acc](const ad::Var& v) { acc = acc ? ad::add(*acc, v) : v; };
  if (parts.mid) {
    accumulate(ad::scale(parts.mid->value, lambda1));
    out.report.components["MID"] = parts.mid->report.total;
  }
  if (parts.id) {
    accumulate(ad::scale(parts.id->value, lambda1));
    out.report.components["ID"] = parts.id->report.total;
  }
  if (parts.cc) {
    accumulate(ad::scale(parts.cc->value, lambda2));
    for (const auto& [k, v] : parts.cc->report.components) out.report.components[k] = v;
    for (const auto& [k, v] : parts.cc->report.flags) out.report.flags[k] = v;
  }
  out.value = acc ? *acc : ad::Var::constant(Tensor2D(1, 1, 0.0));
  out.report.total = out.value.scalar();
  if (parts.id) out.report.per_anchor = parts.id->report.per_anchor;
  return out;
}

}  // namespace sipldl
