#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sipldl/autodiff.hpp"
#include "sipldl/errors.hpp"

namespace sipldl {

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 3e-4;  ///< L2 term added to the gradient (coupled)
};

/// Bias-corrected Adam over a fixed list of leaf parameters.
class Adam {
 public:
  Adam(std::vector<ad::Var> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    require(opts_.lr >= 0.0 && opts_.weight_decay >= 0.0, ErrorKind::Parameter,
            "learning rate and weight decay must be non-negative");
    require(opts_.beta1 >= 0.0 && opts_.beta1 < 1.0 && opts_.beta2 >= 0.0 && opts_.beta2 < 1.0,
            ErrorKind::Parameter, "Adam betas must lie in [0, 1)");
    for (const auto& p : params_) {
      require(p.op() == ad::OpTag::Leaf, ErrorKind::Parameter, "Adam can only update leaf parameters");
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (opts_.lr == 0.0) continue;
      const Tensor2D g = params_[k].grad();
      Tensor2D w = params_[k].value();
      auto wd = w.data();
      auto gd = g.data();
      auto md = m_[k].data();
      auto vd = v_[k].data();
      for (std::size_t i = 0; i < wd.size(); ++i) {
        const double grad = gd[i] + opts_.weight_decay * wd[i];
        md[i] = opts_.beta1 * md[i] + (1.0 - opts_.beta1) * grad;
        vd[i] = opts_.beta2 * vd[i] + (1.0 - opts_.beta2) * grad * grad;
        const double mhat = md[i] / bc1;
        const double vhat = vd[i] / bc2;
        wd[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
      }
      params_[k].set_value(std::move(w));
    }
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<ad::Var> params_;
  AdamOptions opts_;
  std::vector<Tensor2D> m_;
  std::vector<Tensor2D> v_;
  std::size_t t_ = 0;
};

}  // namespace sipldl
