#pragma once

#include <cmath>
#include <vector>

#include "msv/error.hpp"
#include "msv/nn/tensor.hpp"

namespace msv::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moments are kept in double; the parameter list
/// passed to Step() must keep the same order across calls.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {
    if (!(opts_.lr > 0.0)) Fail(ErrorKind::kInvalidArgument, "learning rate must be positive");
  }

  double lr() const { return opts_.lr; }
  void set_lr(double lr) {
    if (!(lr > 0.0)) Fail(ErrorKind::kInvalidArgument, "learning rate must be positive");
    opts_.lr = lr;
  }
  long step_count() const { return step_; }

  void Step(const std::vector<Parameter<T> *> &params) {
    if (m_.empty()) {
      for (const Parameter<T> *p : params) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) Fail(ErrorKind::kShapeMismatch, "Adam: parameter list changed");
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T> &p = *params[i];
      if (p.grad.size() != p.value.size() || m_[i].size() != p.value.size())
        Fail(ErrorKind::kShapeMismatch, "Adam: gradient missing for " + p.name);
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad[j];
        m_[i][j] = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * g;
        v_[i][j] = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * g * g;
        const double mhat = m_[i][j] / c1;
        const double vhat = v_[i][j] / c2;
        p.value[j] = static_cast<T>(p.value[j] - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
      }
    }
  }

 private:
  AdamOptions opts_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace msv::nn
