#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "encwm/autodiff.hpp"
#include "encwm/tensor.hpp"

namespace encwm {

// Affine map y = x W + b with W stored as [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;

  Linear(std::size_t in, std::size_t out)
      : weight(Tensor::parameter({in, out})), bias(Tensor::parameter({out})) {}

  std::size_t in_features() const { return weight.shape[0]; }
  std::size_t out_features() const { return weight.shape[1]; }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void reset(Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(in_features()));
    for (auto& w : weight.data) w = static_cast<float>(rng.uniform(-bound, bound));
    for (auto& b : bias.data) b = static_cast<float>(rng.uniform(-bound, bound));
  }

  Var forward(Graph& g, Var x, bool trainable) {
    Var w = trainable ? g.param(weight) : g.frozen(weight);
    Var b = trainable ? g.param(bias) : g.frozen(bias);
    return add_bias(matmul(x, w), b);
  }

  void set_requires_grad(bool on) {
    weight.requires_grad = on;
    bias.requires_grad = on;
    if (!on) {
      weight.grad.clear();
      bias.grad.clear();
    }
  }
};

// Inverted-dropout mask: each entry is 1/(1-rate) with probability 1-rate
// and 0 otherwise.
inline Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  Tensor mask(shape, 1.0f);
  if (rate == 0.0) return mask;
  const auto keep = static_cast<float>(1.0 / (1.0 - rate));
  for (auto& v : mask.data) v = rng.bernoulli(1.0 - rate) ? keep : 0.0f;
  return mask;
}

// Plain-value helpers for single vectors.

inline Tensor l2_normalize(const Tensor& v) {
  double ss = 0.0;
  for (float x : v.data) ss += double(x) * x;
  const double norm = std::sqrt(ss);
  Tensor out(v.shape);
  if (norm <= kNormEpsilon) return out;
  for (std::size_t i = 0; i < v.numel(); ++i)
    out.data[i] = static_cast<float>(v.data[i] / norm);
  return out;
}

inline double cosine_sim(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_sim: length mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na <= kNormEpsilon || nb <= kNormEpsilon) return 0.0;
  const double c = ab / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

inline double cosine_sim(const Tensor& a, const Tensor& b) {
  return cosine_sim(a.data, b.data);
}

}  // namespace encwm
