#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "sipldl/autodiff.hpp"
#include "sipldl/errors.hpp"

namespace sipldl {

/// Row-stochastic instance graph over a batch: alpha(i, j) is the
/// temperature-scaled softmax of the similarity of i to j over all k != i.
/// The diagonal is excluded and therefore exactly zero.
struct SimilarityMatrix {
  ad::Var alpha;
  double temperature = 0.2;

  std::size_t size() const { return alpha.rows(); }
};

/// Throws InvalidGraph unless `alpha` is square with |alpha_ii| <= tol and
/// every row summing to 1 within tol.
inline void validate_instance_graph(const Tensor2D& alpha, double tol = 1e-9) {
  require(alpha.rows() == alpha.cols(), ErrorKind::InvalidGraph,
          "adjacency must be square, got " + alpha.shape_string());
  for (std::size_t i = 0; i < alpha.rows(); ++i) {
    require(std::abs(alpha(i, i)) <= tol, ErrorKind::InvalidGraph,
            "adjacency diagonal entry " + std::to_string(i) + " is nonzero");
    double s = 0.0;
    for (double v : alpha.row(i)) s += v;
    require(std::abs(s - 1.0) <= tol, ErrorKind::InvalidGraph,
            "adjacency row " + std::to_string(i) + " sums to " + std::to_string(s));
  }
}

/// Differentiable through h. With `normalize_rows_first` the similarity is
/// cosine; otherwise it is the raw inner product of the rows of h.
inline SimilarityMatrix build_similarity(const ad::Var& h, double temperature, bool normalize_rows_first = true) {
  require(h.rows() >= 2, ErrorKind::BatchTooSmall,
          "instance graph needs at least 2 samples, got " + std::to_string(h.rows()));
  require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::Parameter,
          "temperature must be positive, got " + std::to_string(temperature));
  const ad::Var e = normalize_rows_first ? ad::row_l2_normalize(h) : h;
  const ad::Var sims = ad::matmul(e, ad::transpose(e));
  return {ad::softmax_rows(sims, ad::diagonal_mask(h.rows()), temperature), temperature};
}

/// 0.5 * (alpha + I): keeps rows stochastic while giving each node weight on
/// itself. Only used when the self-loop option is switched on.
inline ad::Var with_self_loops(const ad::Var& alpha) {
  return ad::scale(ad::add(alpha, ad::Var::constant(Tensor2D::identity(alpha.rows()))), 0.5);
}

}  // namespace sipldl
