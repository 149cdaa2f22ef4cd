#pragma once

// Independent double-precision reference computations used as test oracles.
// Nothing here calls into the autodiff engine.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, rows of equal length

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec normalized(const Vec& a) {
  const double n = norm(a);
  Vec out(a.size(), 0.0);
  if (n <= 1e-12) return out;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] / n;
  return out;
}

inline double cosine(const Vec& a, const Vec& b) {
  const double na = norm(a), nb = norm(b);
  if (na <= 1e-12 || nb <= 1e-12) return 0.0;
  return dot(a, b) / (na * nb);
}

// y = x W + b, W given as [in][out].
inline Vec affine(const Vec& x, const Mat& w, const Vec& b) {
  Vec y(b);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[i] * w[i][j];
  return y;
}

inline Vec relu(Vec v) {
  for (auto& x : v) x = x > 0.0 ? x : 0.0;
  return v;
}

struct Layer {
  Mat w;
  Vec b;
};

// Affine layers with ReLU between them (not after the last).
inline Vec mlp(const Vec& x, const std::vector<Layer>& layers) {
  Vec h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = affine(h, layers[l].w, layers[l].b);
    if (l + 1 < layers.size()) h = relu(h);
  }
  return h;
}

// Pre-activation values of every hidden layer, for kink detection.
inline std::vector<Vec> hidden_preactivations(const Vec& x, const std::vector<Layer>& layers) {
  std::vector<Vec> out;
  Vec h = x;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    h = affine(h, layers[l].w, layers[l].b);
    out.push_back(h);
    h = relu(h);
  }
  return out;
}

// Softmax cross-entropy of one logit row against `target`, computed by
// explicit enumeration of the softmax denominator.
inline double softmax_ce(const Vec& logits, std::size_t target) {
  double mx = -INFINITY;
  for (double l : logits) mx = std::max(mx, l);
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - mx);
  return -(logits[target] - mx - std::log(denom));
}

// Brute-force NT-Xent: rows are ordered as view pairs (0,1), (2,3), ...
// For each anchor i with partner j, the denominator sums exp(sim/tau) over
// every k != i. Returns the mean over all 2N anchors.
inline double ntxent(const Mat& feats, double tau) {
  const std::size_t n = feats.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i ^ 1u;
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) denom += std::exp(cosine(feats[i], feats[k]) / tau);
    total += -std::log(std::exp(cosine(feats[i], feats[j]) / tau) / denom);
  }
  return total / double(n);
}

// MoCo InfoNCE for one query: -log(exp(q.k+/tau) / (exp(q.k+/tau) + sum exp(q.k_i/tau))).
inline double moco(const Vec& q, const Vec& kplus, const Mat& negatives, double tau) {
  const double pos = std::exp(dot(q, kplus) / tau);
  double denom = pos;
  for (const auto& k : negatives) denom += std::exp(dot(q, k) / tau);
  return -std::log(pos / denom);
}

// Scalar Adam on f(p) = p^2 with the conventional constants.
inline double adam_on_square(double p, double lr, int steps) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2.0 * p;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    p -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  return p;
}

// Elementwise relative error with a floor on the denominator.
inline double rel_error(double a, double b, double floor) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace oracle
