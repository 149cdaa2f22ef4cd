#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "encwm/tensor.hpp"

namespace encwm {

enum class OptimizerKind { Sgd, Adam };

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::Sgd ? "sgd" : "adam";
}

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw Error("unknown optimizer '" + s + "' (expected sgd or adam)");
}

// Optimizer state for a fixed, ordered list of parameters. Adam moment
// buffers are created on the first step and must keep matching the
// parameter shapes afterwards.
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kAdamEps = 1e-8;

  Optimizer(OptimizerKind kind, double learning_rate)
      : kind_(kind), lr_(learning_rate) {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw Error("learning rate must be finite and non-negative");
    }
  }

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

  void step(const std::vector<Tensor*>& params) {
    for (const Tensor* p : params) {
      if (!p->requires_grad || !p->has_grad()) {
        throw Error("optimizer step on a parameter without a gradient");
      }
    }
    ++t_;
    if (kind_ == OptimizerKind::Sgd) {
      for (Tensor* p : params) {
        for (std::size_t i = 0; i < p->numel(); ++i)
          p->data[i] = static_cast<float>(p->data[i] - lr_ * p->grad[i]);
      }
      return;
    }
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.emplace_back(p->numel(), 0.0);
        v_.emplace_back(p->numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) {
      throw Error("optimizer parameter list changed between steps");
    }
    const double bc1 = 1.0 - std::pow(kBeta1, double(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, double(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      if (m_[k].size() != p.numel()) {
        throw ShapeError("Adam moment buffer does not match parameter shape " +
                         shape_str(p.shape));
      }
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double g = p.grad[i];
        m_[k][i] = kBeta1 * m_[k][i] + (1.0 - kBeta1) * g;
        v_[k][i] = kBeta2 * v_[k][i] + (1.0 - kBeta2) * g * g;
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        p.data[i] = static_cast<float>(p.data[i] - lr_ * mhat / (std::sqrt(vhat) + kAdamEps));
      }
    }
  }

  static void zero_grad(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) p->zero_grad();
  }

 private:
  OptimizerKind kind_;
  double lr_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace encwm
