#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sipldl/autodiff.hpp"
#include "sipldl/errors.hpp"
#include "sipldl/losses.hpp"
#include "sipldl/rng.hpp"

namespace sipldl {

// Lower bounds on the class-specific batch-wise contrastive losses
//   L(Z; Y, B, y) = sum_{i in B_y} L(i)
// obtained by applying Jensen's inequality separately to the same-class and
// complement sums in the softmax denominator. All inner products are divided
// by the same temperature as the loss; tau = 1 gives the untempered form.

enum class BoundKind { Supervised, Unsupervised };

inline constexpr double kSlackTolerance = 1e-9;
inline constexpr double kEqualityTolerance = 1e-9;

struct AnchorBound {
  std::size_t index = 0;
  double mean_positive = 0.0;  ///< C_i: mean similarity to B_y \ {i}
  double mean_negative = 0.0;  ///< D_i: mean similarity to B_y^C
  double first_term = 0.0;     ///< constant term (supervised) or confliction term (unsupervised)
  double confrontation = 0.0;
  double bound = 0.0;          ///< log(first_term + confrontation)
  double actual = 0.0;         ///< per-anchor loss
};

struct EqualityCheck {
  bool q1 = false;
  double q1_max_dev = 0.0;  ///< largest spread of same-class similarities over anchors
  bool q2 = false;
  double q2_max_dev = 0.0;  ///< largest spread of complement similarities over anchors
};

struct BoundReport {
  int cls = 0;
  BoundKind kind = BoundKind::Supervised;
  double temperature = 1.0;
  std::vector<AnchorBound> anchors;
  double bound_total = 0.0;
  double actual_total = 0.0;
  double slack = 0.0;  ///< actual_total - bound_total
  EqualityCheck equality;
};

namespace bounds_detail {

struct ClassSets {
  std::vector<std::size_t> members;
  std::vector<std::size_t> complement;
};

inline ClassSets class_sets(const BatchIndexing& idx, int y) {
  ClassSets s{idx.members(y), idx.complement(y)};
  require(s.members.size() >= 2, ErrorKind::DegenerateClass,
          "class " + std::to_string(y) + " has " + std::to_string(s.members.size()) +
              " members in the batch; the bound needs at least 2");
  require(!s.complement.empty(), ErrorKind::BoundUndefined,
          "class " + std::to_string(y) + " has an empty complement in the batch");
  return s;
}

inline void check_gram(const Tensor2D& gram, const BatchIndexing& idx) {
  require(gram.rows() == idx.size() && gram.cols() == idx.size(), ErrorKind::Dimension,
          "similarity " + gram.shape_string() + " for " + std::to_string(idx.size()) + " rows");
}

inline double spread(const Tensor2D& gram, std::size_t i, const std::vector<std::size_t>& set) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  bool any = false;
  for (std::size_t k : set) {
    if (k == i) continue;
    lo = std::min(lo, gram(i, k));
    hi = std::max(hi, gram(i, k));
    any = true;
  }
  return any ? hi - lo : 0.0;
}

inline double mean_over(const Tensor2D& gram, std::size_t i, const std::vector<std::size_t>& set) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k : set) {
    if (k == i) continue;
    s += gram(i, k);
    ++n;
  }
  return s / static_cast<double>(n);
}

inline void finalize(BoundReport& r) {
  r.bound_total = 0.0;
  r.actual_total = 0.0;
  for (const auto& a : r.anchors) {
    r.bound_total += a.bound;
    r.actual_total += a.actual;
  }
  r.slack = r.actual_total - r.bound_total;
}

inline void require_unit(const Tensor2D& z) {
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double norm = kernels::row_norm(z, r);
    require(std::abs(norm - 1.0) <= kUnitNormTolerance, ErrorKind::Normalization,
            "bound evaluation: row " + std::to_string(r) + " has norm " + std::to_string(norm));
  }
}

}  // namespace bounds_detail

/// Q1: for every anchor of class y, its similarities to the other members of
/// B_y agree. Q2: its similarities to B_y^C agree. Deviations are the
/// max - min spread, maximized over anchors.
inline EqualityCheck check_equality_conditions(const Tensor2D& gram, const BatchIndexing& idx, int y,
                                               double tol = kEqualityTolerance) {
  bounds_detail::check_gram(gram, idx);
  const auto members = idx.members(y);
  const auto complement = idx.complement(y);
  EqualityCheck eq;
  for (std::size_t i : members) {
    eq.q1_max_dev = std::max(eq.q1_max_dev, bounds_detail::spread(gram, i, members));
    eq.q2_max_dev = std::max(eq.q2_max_dev, bounds_detail::spread(gram, i, complement));
  }
  eq.q1 = eq.q1_max_dev <= tol;
  eq.q2 = eq.q2_max_dev <= tol;
  return eq;
}

/// Supervised bound for class y from a similarity matrix:
///   sum_{i in B_y} log( |B_y|-1 + |B_y^C| exp((D_i - C_i)/tau) )
/// compared against the supervised contrastive loss on the same anchors.
inline BoundReport bound_sc_from_similarity(const Tensor2D& gram, const BatchIndexing& idx, int y, double tau,
                                            double eq_tol = kEqualityTolerance) {
  bounds_detail::check_gram(gram, idx);
  const auto sets = bounds_detail::class_sets(idx, y);
  const LossResult loss = loss_sc_from_similarity(ad::Var::constant(gram), idx, tau);
  BoundReport r;
  r.cls = y;
  r.kind = BoundKind::Supervised;
  r.temperature = tau;
  const double n_pos = static_cast<double>(sets.members.size() - 1);
  const double n_neg = static_cast<double>(sets.complement.size());
  for (std::size_t i : sets.members) {
    AnchorBound a;
    a.index = i;
    a.mean_positive = bounds_detail::mean_over(gram, i, sets.members);
    a.mean_negative = bounds_detail::mean_over(gram, i, sets.complement);
    a.first_term = n_pos;
    a.confrontation = n_neg * std::exp((a.mean_negative - a.mean_positive) / tau);
    a.bound = std::log(a.first_term + a.confrontation);
    a.actual = loss.report.per_anchor[i].value;
    r.anchors.push_back(a);
  }
  bounds_detail::finalize(r);
  r.equality = check_equality_conditions(gram, idx, y, eq_tol);
  return r;
}

/// Unsupervised bound for class y, with s_ij the similarity to the
/// augmentation partner:
///   sum_{i in B_y} log( |B_y \ {i}| exp((C_i - s_ij)/tau) + |B_y^C| exp((D_i - s_ij)/tau) )
/// compared against the instance contrastive loss on the same anchors.
inline BoundReport bound_uc_from_similarity(const Tensor2D& gram, const BatchIndexing& idx, int y, double tau,
                                            double eq_tol = kEqualityTolerance) {
  bounds_detail::check_gram(gram, idx);
  const auto sets = bounds_detail::class_sets(idx, y);
  const LossResult loss = loss_uc_from_similarity(ad::Var::constant(gram), idx, tau);
  BoundReport r;
  r.cls = y;
  r.kind = BoundKind::Unsupervised;
  r.temperature = tau;
  const double n_pos = static_cast<double>(sets.members.size() - 1);
  const double n_neg = static_cast<double>(sets.complement.size());
  for (std::size_t i : sets.members) {
    AnchorBound a;
    a.index = i;
    a.mean_positive = bounds_detail::mean_over(gram, i, sets.members);
    a.mean_negative = bounds_detail::mean_over(gram, i, sets.complement);
    const double s_pair = gram(i, idx.partner[i]);
    a.first_term = n_pos * std::exp((a.mean_positive - s_pair) / tau);
    a.confrontation = n_neg * std::exp((a.mean_negative - s_pair) / tau);
    a.bound = std::log(a.first_term + a.confrontation);
    a.actual = loss.report.per_anchor[i].value;
    r.anchors.push_back(a);
  }
  bounds_detail::finalize(r);
  r.equality = check_equality_conditions(gram, idx, y, eq_tol);
  return r;
}

/// Embedding-space entry points; rows of z must be unit norm.
inline BoundReport bound_sc(const Tensor2D& z, const BatchIndexing& idx, int y, double tau,
                            double eq_tol = kEqualityTolerance) {
  bounds_detail::require_unit(z);
  return bound_sc_from_similarity(kernels::gram(z), idx, y, tau, eq_tol);
}

inline BoundReport bound_uc(const Tensor2D& z, const BatchIndexing& idx, int y, double tau,
                            double eq_tol = kEqualityTolerance) {
  bounds_detail::require_unit(z);
  return bound_uc_from_similarity(kernels::gram(z), idx, y, tau, eq_tol);
}

inline EqualityCheck check_equality_conditions_z(const Tensor2D& z, const BatchIndexing& idx, int y,
                                                 double tol = kEqualityTolerance) {
  return check_equality_conditions(kernels::gram(z), idx, y, tol);
}

/// Majority-vs-minority comparison of the supervised bound when both classes
/// share the exponential term e (early training, before either class has
/// separated). Arguments of the log are per anchor.
struct ImbalanceAnalysis {
  double r_im = 1.0;
  double e = 1.0;
  std::size_t n_minority = 1;
  double lb_majority_arg = 0.0;  ///< (r_im + e) * N_C
  double lb_minority_arg = 0.0;  ///< (1 + r_im * e) * N_C
  double lb_majority = 0.0;      ///< log of the argument
  double lb_minority = 0.0;
  double gap_factor = 0.0;       ///< (r_im - 1)(1 - e)
};

inline ImbalanceAnalysis imbalance_gap(double r_im, double e, std::size_t n_minority) {
  require(std::isfinite(r_im) && r_im >= 1.0, ErrorKind::Parameter,
          "imbalance ratio must be >= 1, got " + std::to_string(r_im));
  require(e > 0.0 && e <= 1.0, ErrorKind::Parameter, "shared exponential term must lie in (0, 1]");
  require(n_minority >= 1, ErrorKind::Parameter, "minority class count must be >= 1");
  ImbalanceAnalysis a;
  a.r_im = r_im;
  a.e = e;
  a.n_minority = n_minority;
  const double nc = static_cast<double>(n_minority);
  a.lb_majority_arg = (r_im + e) * nc;
  a.lb_minority_arg = (1.0 + r_im * e) * nc;
  a.lb_majority = std::log(a.lb_majority_arg);
  a.lb_minority = std::log(a.lb_minority_arg);
  a.gap_factor = (r_im - 1.0) * (1.0 - e);
  require(a.lb_majority >= a.lb_minority, ErrorKind::Parameter, "majority bound fell below minority bound");
  return a;
}

// --- Randomized verification -------------------------------------------------

struct FuzzConfig {
  std::size_t seeds = 1000;
  std::size_t n_min = 4, n_max = 16;  ///< batch rows (two views, so even)
  std::size_t h_min = 2, h_max = 8;
  std::size_t c_min = 2, c_max = 4;
  std::vector<double> taus{0.2, 0.5, 1.0};
  std::uint64_t base_seed = 0;

  void validate() const {
    require(seeds >= 1, ErrorKind::Parameter, "seeds must be >= 1");
    require(n_min >= 4 && n_min <= n_max, ErrorKind::Parameter, "need 4 <= n_min <= n_max");
    require(h_min >= 1 && h_min <= h_max, ErrorKind::Parameter, "need 1 <= h_min <= h_max");
    require(c_min >= 2 && c_min <= c_max, ErrorKind::Parameter, "need 2 <= c_min <= c_max");
    require(!taus.empty(), ErrorKind::Parameter, "at least one temperature is required");
    for (double t : taus) require(t > 0.0, ErrorKind::Parameter, "temperatures must be positive");
  }
};

/// One randomly drawn two-view configuration.
struct FuzzCase {
  Tensor2D z;
  BatchIndexing idx;
  double tau = 1.0;
};

/// Labels for N/2 base samples (every class in [0, C) at least once, C <= N/2),
/// class-clustered base embeddings of random tightness, and a second view that
/// is a random perturbation of the first.
inline FuzzCase draw_fuzz_case(const FuzzConfig& cfg, std::size_t k) {
  Rng rng = make_rng(cfg.base_seed, {0x46555a5aULL, k});
  auto pick = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  const std::size_t m = pick((cfg.n_min + 1) / 2, cfg.n_max / 2);
  const std::size_t classes = pick(cfg.c_min, std::max(cfg.c_min, std::min(cfg.c_max, m)));
  const std::size_t h = pick(cfg.h_min, cfg.h_max);
  const double tau = cfg.taus[k % cfg.taus.size()];

  std::vector<int> labels(m);
  for (std::size_t i = 0; i < m; ++i)
    labels[i] = i < classes ? static_cast<int>(i) : static_cast<int>(pick(0, classes - 1));
  std::shuffle(labels.begin(), labels.end(), rng);

  auto random_unit = [&](std::vector<double>& v) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : v) {
        x = normal(rng);
        norm += x * x;
      }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  };

  std::vector<std::vector<double>> centers(classes, std::vector<double>(h));
  for (auto& c : centers) random_unit(c);
  const double tightness = uniform(rng, 0.0, 3.0);
  const double view_noise = uniform(rng, 0.0, 1.0);

  Tensor2D z(2 * m, h);
  std::vector<double> noise(h);
  auto normalize_row = [&z](std::size_t r) {
    double norm = kernels::row_norm(z, r);
    if (norm < 1e-12) {
      z(r, 0) = 1.0;
      norm = kernels::row_norm(z, r);
    }
    for (double& x : z.row(r)) x /= norm;
  };
  for (std::size_t i = 0; i < m; ++i) {
    random_unit(noise);
    for (std::size_t d = 0; d < h; ++d)
      z(i, d) = tightness * centers[static_cast<std::size_t>(labels[i])][d] + noise[d];
    normalize_row(i);
    random_unit(noise);
    for (std::size_t d = 0; d < h; ++d) z(i + m, d) = z(i, d) + view_noise * noise[d];
    normalize_row(i + m);
  }
  return {std::move(z), BatchIndexing::two_views(labels), tau};
}

struct FuzzSummary {
  std::size_t configurations = 0;
  std::size_t class_evaluations = 0;
  std::size_t violations = 0;              ///< slack below -kSlackTolerance
  std::size_t equality_inconsistencies = 0;  ///< equality flags disagreeing with slack
  std::size_t equality_cases = 0;          ///< evaluations with both flags at 1e-12
  double worst_slack_sc = std::numeric_limits<double>::infinity();
  double worst_slack_uc = std::numeric_limits<double>::infinity();
  std::uint64_t worst_seed_sc = 0;
  std::uint64_t worst_seed_uc = 0;

  bool ok() const { return violations == 0 && equality_inconsistencies == 0; }
};

/// Checks both bounds on every class of every drawn configuration, plus the
/// equality characterization: both flags at 1e-12 imply slack < 1e-9, and
/// slack > 1e-6 implies some flag fails.
inline FuzzSummary run_bound_fuzz(const FuzzConfig& cfg) {
  cfg.validate();
  FuzzSummary s;
  for (std::size_t k = 0; k < cfg.seeds; ++k) {
    const FuzzCase fc = draw_fuzz_case(cfg, k);
    ++s.configurations;
    const Tensor2D g = kernels::gram(fc.z);
    for (int y : fc.idx.classes()) {
      for (BoundKind kind : {BoundKind::Supervised, BoundKind::Unsupervised}) {
        const BoundReport r = kind == BoundKind::Supervised ? bound_sc_from_similarity(g, fc.idx, y, fc.tau, 1e-12)
                                                            : bound_uc_from_similarity(g, fc.idx, y, fc.tau, 1e-12);
        ++s.class_evaluations;
        double& worst = kind == BoundKind::Supervised ? s.worst_slack_sc : s.worst_slack_uc;
        if (r.slack < worst) {
          worst = r.slack;
          (kind == BoundKind::Supervised ? s.worst_seed_sc : s.worst_seed_uc) = k;
        }
        if (r.slack < -kSlackTolerance) ++s.violations;
        const bool both = r.equality.q1 && r.equality.q2;
        if (both) ++s.equality_cases;
        if (both && r.slack >= kSlackTolerance) ++s.equality_inconsistencies;
      }
    }
  }
  return s;
}

}  // namespace sipldl
