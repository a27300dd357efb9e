#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sipldl/errors.hpp"
#include "sipldl/tensor.hpp"

namespace sipldl::ad {

enum class OpTag {
  Leaf,
  Constant,
  MatMul,
  Add,
  AddRow,
  Sub,
  Mul,
  Scale,
  Relu,
  Exp,
  Log,
  Sum,
  Mean,
  Transpose,
  RowL2Normalize,
  SoftmaxRows,
  SoftTargetNll,
  WeightedLogNll,
  CrossEntropy,
  Conv1d,
  MaxPool1d,
  ConcatRows,
  SelectRows,
};

inline std::string_view to_string(OpTag tag) {
  switch (tag) {
    case OpTag::Leaf: return "leaf";
    case OpTag::Constant: return "constant";
    case OpTag::MatMul: return "matmul";
    case OpTag::Add: return "add";
    case OpTag::AddRow: return "add_row";
    case OpTag::Sub: return "sub";
    case OpTag::Mul: return "mul";
    case OpTag::Scale: return "scale";
    case OpTag::Relu: return "relu";
    case OpTag::Exp: return "exp";
    case OpTag::Log: return "log";
    case OpTag::Sum: return "sum";
    case OpTag::Mean: return "mean";
    case OpTag::Transpose: return "transpose";
    case OpTag::RowL2Normalize: return "row_l2_normalize";
    case OpTag::SoftmaxRows: return "softmax_rows";
    case OpTag::SoftTargetNll: return "soft_target_nll";
    case OpTag::WeightedLogNll: return "weighted_log_nll";
    case OpTag::CrossEntropy: return "cross_entropy_with_logits";
    case OpTag::Conv1d: return "conv1d";
    case OpTag::MaxPool1d: return "max_pool1d";
    case OpTag::ConcatRows: return "concat_rows";
    case OpTag::SelectRows: return "select_rows";
  }
  return "unknown";
}

/// One vertex of the computation graph. `backward` reads `grad` and
/// accumulates into the parents' gradients.
struct Node {
  Tensor2D value;
  Tensor2D grad;
  OpTag op = OpTag::Constant;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-filled on first access.
  Tensor2D& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor2D(value.rows(), value.cols());
    return grad;
  }
};

/// Handle to a node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var leaf(Tensor2D value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = OpTag::Leaf;
    n->requires_grad = true;
    return Var(std::move(n));
  }

  static Var constant(Tensor2D value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = OpTag::Constant;
    return Var(std::move(n));
  }

  bool valid() const noexcept { return static_cast<bool>(node_); }
  const Tensor2D& value() const { return node_->value; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  OpTag op() const { return node_->op; }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; a zero matrix when nothing has flowed here.
  Tensor2D grad() const {
    if (node_->grad.empty()) return Tensor2D(rows(), cols());
    return node_->grad;
  }

  double scalar() const {
    require(rows() == 1 && cols() == 1, ErrorKind::Dimension,
            "scalar() on " + value().shape_string() + " value");
    return value()(0, 0);
  }

  void zero_grad() { node_->grad = Tensor2D(); }

  /// Replace a leaf's value (optimizer step). Shape must not change.
  void set_value(Tensor2D value) {
    require(node_->op == OpTag::Leaf, ErrorKind::Parameter, "set_value on a non-leaf node");
    require(value.same_shape(node_->value), ErrorKind::Dimension,
            "set_value shape " + value.shape_string() + " != " + node_->value.shape_string());
    node_->value = std::move(value);
  }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make(Tensor2D value, OpTag op, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const Var& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (const Var& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

inline bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

inline void add_into(Tensor2D& dst, const Tensor2D& src, double factor = 1.0) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

inline void check_same(const Var& a, const Var& b, const char* what) {
  require(a.value().same_shape(b.value()), ErrorKind::Dimension,
          std::string(what) + ": shape mismatch " + a.value().shape_string() + " vs " +
              b.value().shape_string());
}

}  // namespace detail

/// Reverse sweep from a scalar output. Gradients accumulate into every
/// reachable node that requires them; shared subexpressions sum.
inline void backward(const Var& output) {
  require(output.rows() == 1 && output.cols() == 1, ErrorKind::Dimension,
          "backward() needs a 1x1 output, got " + output.value().shape_string());
  if (!output.requires_grad()) return;

  // Iterative post-order DFS; parents are visited in declaration order so the
  // sweep order is deterministic.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  seen.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  output.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

inline Var detach(const Var& x) { return Var::constant(x.value()); }

inline Var matmul(const Var& a, const Var& b) {
  Tensor2D out = kernels::matmul(a.value(), b.value());
  return detail::make(std::move(out), OpTag::MatMul, {a, b}, [](Node& self) {
    const Tensor2D& av = self.parents[0]->value;
    const Tensor2D& bv = self.parents[1]->value;
    if (detail::wants(self, 0))
      detail::add_into(self.parents[0]->grad_buffer(), kernels::matmul_nt(self.grad, bv));
    if (detail::wants(self, 1))
      detail::add_into(self.parents[1]->grad_buffer(), kernels::matmul_tn(av, self.grad));
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same(a, b, "add");
  Tensor2D out = a.value();
  detail::add_into(out, b.value());
  return detail::make(std::move(out), OpTag::Add, {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (detail::wants(self, i)) detail::add_into(self.parents[i]->grad_buffer(), self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same(a, b, "sub");
  Tensor2D out = a.value();
  detail::add_into(out, b.value(), -1.0);
  return detail::make(std::move(out), OpTag::Sub, {a, b}, [](Node& self) {
    if (detail::wants(self, 0)) detail::add_into(self.parents[0]->grad_buffer(), self.grad);
    if (detail::wants(self, 1)) detail::add_into(self.parents[1]->grad_buffer(), self.grad, -1.0);
  });
}

/// x + broadcast(bias) where bias is 1 x cols.
inline Var add_row(const Var& x, const Var& bias) {
  require(bias.rows() == 1 && bias.cols() == x.cols(), ErrorKind::Dimension,
          "add_row: bias " + bias.value().shape_string() + " does not broadcast over " +
              x.value().shape_string());
  Tensor2D out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias.value()(0, c);
  return detail::make(std::move(out), OpTag::AddRow, {x, bias}, [](Node& self) {
    if (detail::wants(self, 0)) detail::add_into(self.parents[0]->grad_buffer(), self.grad);
    if (detail::wants(self, 1)) {
      Tensor2D& gb = self.parents[1]->grad_buffer();
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < self.grad.cols(); ++c) gb(0, c) += self.grad(r, c);
    }
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::check_same(a, b, "mul");
  Tensor2D out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return detail::make(std::move(out), OpTag::Mul, {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::wants(self, p)) continue;
      auto g = self.parents[p]->grad_buffer().data();
      auto other = self.parents[1 - p]->value.data();
      auto up = self.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] * other[i];
    }
  });
}

inline Var scale(const Var& x, double factor) {
  Tensor2D out = x.value();
  for (double& v : out.data()) v *= factor;
  return detail::make(std::move(out), OpTag::Scale, {x}, [factor](Node& self) {
    detail::add_into(self.parents[0]->grad_buffer(), self.grad, factor);
  });
}

inline Var relu(const Var& x) {
  Tensor2D out = x.value();
  for (double& v : out.data()) v = v > 0.0 || std::isnan(v) ? v : 0.0;
  return detail::make(std::move(out), OpTag::Relu, {x}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer().data();
    auto in = self.parents[0]->value.data();
    auto up = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0.0) g[i] += up[i];
  });
}

inline Var exp(const Var& x) {
  Tensor2D out = x.value();
  for (double& v : out.data()) v = std::exp(v);
  return detail::make(std::move(out), OpTag::Exp, {x}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer().data();
    auto y = self.value.data();
    auto up = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] * y[i];
  });
}

inline Var log(const Var& x) {
  Tensor2D out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    require(out.data()[i] > 0.0, ErrorKind::DegenerateInput,
            "log of non-positive entry at flat index " + std::to_string(i));
    out.data()[i] = std::log(out.data()[i]);
  }
  return detail::make(std::move(out), OpTag::Log, {x}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer().data();
    auto in = self.parents[0]->value.data();
    auto up = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] / in[i];
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return detail::make(Tensor2D(1, 1, s), OpTag::Sum, {x}, [](Node& self) {
    const double up = self.grad(0, 0);
    for (double& g : self.parents[0]->grad_buffer().data()) g += up;
  });
}

inline Var mean(const Var& x) {
  require(x.value().size() > 0, ErrorKind::Dimension, "mean of an empty matrix");
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return detail::make(Tensor2D(1, 1, s / n), OpTag::Mean, {x}, [n](Node& self) {
    const double up = self.grad(0, 0) / n;
    for (double& g : self.parents[0]->grad_buffer().data()) g += up;
  });
}

inline Var transpose(const Var& x) {
  return detail::make(kernels::transpose(x.value()), OpTag::Transpose, {x}, [](Node& self) {
    detail::add_into(self.parents[0]->grad_buffer(), kernels::transpose(self.grad));
  });
}

inline constexpr double kMinRowNorm = 1e-12;

inline Var row_l2_normalize(const Var& x) {
  const Tensor2D& in = x.value();
  Tensor2D out(in.rows(), in.cols());
  std::vector<double> norms(in.rows());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const double norm = kernels::row_norm(in, r);
    require(norm >= kMinRowNorm, ErrorKind::DegenerateInput,
            "row_l2_normalize: row " + std::to_string(r) + " has norm below 1e-12");
    norms[r] = norm;
    for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = in(r, c) / norm;
  }
  return detail::make(std::move(out), OpTag::RowL2Normalize, {x},
                      [norms = std::move(norms)](Node& self) {
    Tensor2D& g = self.parents[0]->grad_buffer();
    const Tensor2D& y = self.value;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += self.grad(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c)
        g(r, c) += (self.grad(r, c) - y(r, c) * dot) / norms[r];
    }
  });
}

/// Per-row excluded column (at most one per row).
using RowMask = std::vector<std::optional<std::size_t>>;

inline RowMask diagonal_mask(std::size_t n) {
  RowMask m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = i;
  return m;
}

namespace detail {

inline bool excluded(const RowMask& mask, std::size_t r, std::size_t c) {
  return r < mask.size() && mask[r] && *mask[r] == c;
}

inline void check_mask(const RowMask& mask, const Tensor2D& x) {
  require(mask.empty() || mask.size() == x.rows(), ErrorKind::Dimension,
          "mask has " + std::to_string(mask.size()) + " rows, input " + x.shape_string());
  for (std::size_t r = 0; r < mask.size(); ++r)
    require(!mask[r] || *mask[r] < x.cols(), ErrorKind::Dimension,
            "mask index out of range in row " + std::to_string(r));
}

/// Stable log-sum-exp over the unmasked entries of row r of x/temperature.
inline double row_logsumexp(const Tensor2D& x, std::size_t r, const RowMask& mask, double temperature) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < x.cols(); ++c)
    if (!excluded(mask, r, c)) mx = std::max(mx, x(r, c) / temperature);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t c = 0; c < x.cols(); ++c)
    if (!excluded(mask, r, c)) s += std::exp(x(r, c) / temperature - mx);
  return mx + std::log(s);
}

}  // namespace detail

}  // namespace sipldl::ad

namespace sipldl::kernels {

/// Row softmax of x / temperature with per-row exclusion; max-subtracted.
inline Tensor2D softmax_row(const Tensor2D& x, const ad::RowMask& mask, double temperature) {
  require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::Parameter,
          "softmax temperature must be positive, got " + std::to_string(temperature));
  ad::detail::check_mask(mask, x);
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < x.cols(); ++c)
      if (!ad::detail::excluded(mask, r, c)) mx = std::max(mx, x(r, c) / temperature);
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (ad::detail::excluded(mask, r, c)) continue;
      const double e = std::exp(x(r, c) / temperature - mx);
      out(r, c) = e;
      s += e;
    }
    if (s > 0.0)
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= s;
  }
  return out;
}

}  // namespace sipldl::kernels

namespace sipldl::ad {

/// Differentiable row softmax of x / temperature; excluded entries are 0.
inline Var softmax_rows(const Var& x, const RowMask& mask, double temperature) {
  Tensor2D out = kernels::softmax_row(x.value(), mask, temperature);
  return detail::make(std::move(out), OpTag::SoftmaxRows, {x}, [temperature](Node& self) {
    Tensor2D& g = self.parents[0]->grad_buffer();
    const Tensor2D& y = self.value;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += self.grad(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c)
        g(r, c) += y(r, c) * (self.grad(r, c) - dot) / temperature;
    }
  });
}

/// Per-row cross-entropy against soft targets under a masked log-softmax:
///   out_r = -sum_c t_rc * log softmax_masked(logits)_rc
/// Targets on masked entries must be zero. Returns an N x 1 column.
inline Var soft_target_nll(const Var& logits, const Tensor2D& targets, const RowMask& mask) {
  const Tensor2D& x = logits.value();
  require(targets.same_shape(x), ErrorKind::Dimension,
          "soft_target_nll: targets " + targets.shape_string() + " vs logits " + x.shape_string());
  detail::check_mask(mask, x);
  Tensor2D out(x.rows(), 1);
  std::vector<double> lse(x.rows());
  std::vector<double> mass(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    lse[r] = detail::row_logsumexp(x, r, mask, 1.0);
    double loss = 0.0, m = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double t = targets(r, c);
      if (t == 0.0) continue;
      require(!detail::excluded(mask, r, c), ErrorKind::Parameter,
              "soft_target_nll: nonzero target on a masked entry in row " + std::to_string(r));
      loss -= t * (x(r, c) - lse[r]);
      m += t;
    }
    out(r, 0) = loss;
    mass[r] = m;
  }
  return detail::make(std::move(out), OpTag::SoftTargetNll, {logits},
                      [targets, mask, lse = std::move(lse), mass = std::move(mass)](Node& self) {
    Tensor2D& g = self.parents[0]->grad_buffer();
    const Tensor2D& xv = self.parents[0]->value;
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const double up = self.grad(r, 0);
      if (up == 0.0) continue;
      for (std::size_t c = 0; c < xv.cols(); ++c) {
        if (detail::excluded(mask, r, c)) continue;
        const double p = std::exp(xv(r, c) - lse[r]);
        g(r, c) += up * (p * mass[r] - targets(r, c));
      }
    }
  });
}

/// Per-row weighted negative log of probabilities:
///   out_r = -sum_c t_rc * log max(p_rc, floor)
/// Entries with zero target are skipped. Clamped entries pass no gradient;
/// their count is written to `clamped` when given.
inline Var weighted_log_nll(const Var& probs, const Tensor2D& targets, double floor,
                            std::size_t* clamped = nullptr) {
  const Tensor2D& p = probs.value();
  require(targets.same_shape(p), ErrorKind::Dimension,
          "weighted_log_nll: targets " + targets.shape_string() + " vs probs " + p.shape_string());
  Tensor2D out(p.rows(), 1);
  std::size_t n_clamped = 0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double loss = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) {
      const double t = targets(r, c);
      if (t == 0.0) continue;
      double v = p(r, c);
      if (v < floor) {
        v = floor;
        ++n_clamped;
      }
      loss -= t * std::log(v);
    }
    out(r, 0) = loss;
  }
  if (clamped) *clamped = n_clamped;
  return detail::make(std::move(out), OpTag::WeightedLogNll, {probs}, [targets, floor](Node& self) {
    Tensor2D& g = self.parents[0]->grad_buffer();
    const Tensor2D& pv = self.parents[0]->value;
    for (std::size_t r = 0; r < pv.rows(); ++r) {
      const double up = self.grad(r, 0);
      for (std::size_t c = 0; c < pv.cols(); ++c) {
        const double t = targets(r, c);
        if (t == 0.0 || pv(r, c) < floor) continue;
        g(r, c) -= up * t / pv(r, c);
      }
    }
  });
}

/// Softmax cross-entropy for the selected rows of an N x C logits matrix.
/// Returns a |rows| x 1 column of per-sample losses.
inline Var cross_entropy_with_logits(const Var& logits, std::span<const int> labels,
                                     std::span<const std::size_t> rows) {
  const Tensor2D& x = logits.value();
  require(labels.size() == x.rows(), ErrorKind::Dimension,
          "cross_entropy_with_logits: " + std::to_string(labels.size()) + " labels for " +
              x.shape_string() + " logits");
  std::vector<std::size_t> sel(rows.begin(), rows.end());
  std::vector<int> lab(labels.begin(), labels.end());
  Tensor2D out(sel.size(), 1);
  std::vector<double> lse(sel.size());
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const std::size_t r = sel[i];
    require(r < x.rows(), ErrorKind::Dimension, "cross_entropy_with_logits: row index out of range");
    require(lab[r] >= 0 && static_cast<std::size_t>(lab[r]) < x.cols(), ErrorKind::Range,
            "label " + std::to_string(lab[r]) + " outside [0," + std::to_string(x.cols()) + ")");
    lse[i] = detail::row_logsumexp(x, r, {}, 1.0);
    out(i, 0) = lse[i] - x(r, static_cast<std::size_t>(lab[r]));
  }
  return detail::make(std::move(out), OpTag::CrossEntropy, {logits},
                      [sel = std::move(sel), lab = std::move(lab), lse = std::move(lse)](Node& self) {
    Tensor2D& g = self.parents[0]->grad_buffer();
    const Tensor2D& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < sel.size(); ++i) {
      const std::size_t r = sel[i];
      const double up = self.grad(i, 0);
      for (std::size_t c = 0; c < xv.cols(); ++c) g(r, c) += up * std::exp(xv(r, c) - lse[i]);
      g(r, static_cast<std::size_t>(lab[r])) -= up;
    }
  });
}

/// Shape bookkeeping for channel-major flattened series: a row holds
/// `channels` consecutive blocks of `length` samples.
struct SeriesShape {
  std::size_t channels = 1;
  std::size_t length = 0;
  std::size_t width() const { return channels * length; }
};

/// Stride-1 same-padded 1-D convolution.
///   x: N x (Cin*L), weight: Cout x (Cin*K), bias: 1 x Cout  ->  N x (Cout*L)
/// Padding is (K-1)/2 on the left and the rest on the right.
inline Var conv1d(const Var& x, const Var& weight, const Var& bias, SeriesShape in) {
  const Tensor2D& xv = x.value();
  const Tensor2D& wv = weight.value();
  require(xv.cols() == in.width(), ErrorKind::Dimension,
          "conv1d: input " + xv.shape_string() + " does not match " + std::to_string(in.channels) +
              " channels x " + std::to_string(in.length) + " steps");
  require(in.channels > 0 && wv.cols() % in.channels == 0 && wv.cols() > 0, ErrorKind::Dimension,
          "conv1d: weight " + wv.shape_string() + " incompatible with " + std::to_string(in.channels) +
              " input channels");
  const std::size_t cout = wv.rows();
  const std::size_t k = wv.cols() / in.channels;
  require(bias.rows() == 1 && bias.cols() == cout, ErrorKind::Dimension,
          "conv1d: bias " + bias.value().shape_string() + " for " + std::to_string(cout) + " outputs");
  const std::size_t cin = in.channels, len = in.length, n = xv.rows();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);

  // Valid output range [t0, t1) for tap kk: 0 <= t + kk - pad < len.
  auto range = [len, pad](std::size_t kk) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - pad;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                                       static_cast<std::ptrdiff_t>(len) - shift);
    return std::tuple{lo, hi, shift};
  };

  Tensor2D out(n, cout * len);
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = xv.data().data() + s * cin * len;
    double* ys = out.data().data() + s * cout * len;
    for (std::size_t o = 0; o < cout; ++o) {
      double* yo = ys + o * len;
      const double b = bias.value()(0, o);
      for (std::size_t t = 0; t < len; ++t) yo[t] = b;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xc = xs + c * len;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double w = wv(o, c * k + kk);
          auto [lo, hi, shift] = range(kk);
          for (std::ptrdiff_t t = lo; t < hi; ++t) yo[t] += w * xc[t + shift];
        }
      }
    }
  }

  return detail::make(std::move(out), OpTag::Conv1d, {x, weight, bias},
                      [cin, cout, len, k, n, range](Node& self) {
    const Tensor2D& xv = self.parents[0]->value;
    const Tensor2D& wv = self.parents[1]->value;
    const bool gx = detail::wants(self, 0), gw = detail::wants(self, 1), gb = detail::wants(self, 2);
    double* dx = gx ? self.parents[0]->grad_buffer().data().data() : nullptr;
    Tensor2D* dw = gw ? &self.parents[1]->grad_buffer() : nullptr;
    Tensor2D* db = gb ? &self.parents[2]->grad_buffer() : nullptr;
    for (std::size_t s = 0; s < n; ++s) {
      const double* xs = xv.data().data() + s * cin * len;
      const double* gs = self.grad.data().data() + s * cout * len;
      for (std::size_t o = 0; o < cout; ++o) {
        const double* go = gs + o * len;
        if (db) {
          double acc = 0.0;
          for (std::size_t t = 0; t < len; ++t) acc += go[t];
          (*db)(0, o) += acc;
        }
        for (std::size_t c = 0; c < cin; ++c) {
          const double* xc = xs + c * len;
          double* dxc = dx ? dx + s * cin * len + c * len : nullptr;
          for (std::size_t kk = 0; kk < k; ++kk) {
            auto [lo, hi, shift] = range(kk);
            if (dw) {
              double acc = 0.0;
              for (std::ptrdiff_t t = lo; t < hi; ++t) acc += go[t] * xc[t + shift];
              (*dw)(o, c * k + kk) += acc;
            }
            if (dxc) {
              const double w = wv(o, c * k + kk);
              for (std::ptrdiff_t t = lo; t < hi; ++t) dxc[t + shift] += w * go[t];
            }
          }
        }
      }
    }
  });
}

/// Non-overlapping max pooling along time; trailing steps that do not fill a
/// window are dropped.  N x (C*L) -> N x (C*(L/width)).
inline Var max_pool1d(const Var& x, SeriesShape in, std::size_t width) {
  require(width >= 1, ErrorKind::Parameter, "max_pool1d: width must be >= 1");
  const Tensor2D& xv = x.value();
  require(xv.cols() == in.width(), ErrorKind::Dimension,
          "max_pool1d: input " + xv.shape_string() + " does not match " + std::to_string(in.channels) +
              " channels x " + std::to_string(in.length) + " steps");
  const std::size_t out_len = in.length / width;
  require(out_len >= 1, ErrorKind::Dimension, "max_pool1d: series shorter than the pooling width");
  Tensor2D out(xv.rows(), in.channels * out_len);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t s = 0; s < xv.rows(); ++s)
    for (std::size_t c = 0; c < in.channels; ++c)
      for (std::size_t t = 0; t < out_len; ++t) {
        std::size_t best = c * in.length + t * width;
        for (std::size_t j = 1; j < width; ++j) {
          const std::size_t col = c * in.length + t * width + j;
          if (xv(s, col) > xv(s, best)) best = col;
        }
        const std::size_t oc = c * out_len + t;
        out(s, oc) = xv(s, best);
        argmax[s * out.cols() + oc] = best;
      }
  return detail::make(std::move(out), OpTag::MaxPool1d, {x}, [argmax = std::move(argmax)](Node& self) {
    Tensor2D& g = self.parents[0]->grad_buffer();
    const std::size_t oc = self.value.cols();
    for (std::size_t s = 0; s < self.value.rows(); ++s)
      for (std::size_t c = 0; c < oc; ++c) g(s, argmax[s * oc + c]) += self.grad(s, c);
  });
}

inline Var concat_rows(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), ErrorKind::Dimension,
          "concat_rows: " + a.value().shape_string() + " vs " + b.value().shape_string());
  std::vector<double> data(a.value().vec());
  data.insert(data.end(), b.value().vec().begin(), b.value().vec().end());
  const std::size_t ra = a.rows();
  return detail::make(Tensor2D(a.rows() + b.rows(), a.cols(), std::move(data)), OpTag::ConcatRows, {a, b},
                      [ra](Node& self) {
    const std::size_t cols = self.value.cols();
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::wants(self, p)) continue;
      auto g = self.parents[p]->grad_buffer().data();
      const double* up = self.grad.data().data() + (p == 0 ? 0 : ra * cols);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i];
    }
  });
}

inline Var select_rows(const Var& x, std::span<const std::size_t> rows) {
  std::vector<std::size_t> sel(rows.begin(), rows.end());
  Tensor2D out(sel.size(), x.cols());
  for (std::size_t i = 0; i < sel.size(); ++i) {
    require(sel[i] < x.rows(), ErrorKind::Dimension,
            "select_rows: index " + std::to_string(sel[i]) + " out of range for " + x.value().shape_string());
    std::copy(x.value().row(sel[i]).begin(), x.value().row(sel[i]).end(), out.row(i).begin());
  }
  return detail::make(std::move(out), OpTag::SelectRows, {x}, [sel = std::move(sel)](Node& self) {
    Tensor2D& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < sel.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) g(sel[i], c) += self.grad(i, c);
  });
}

}  // namespace sipldl::ad
