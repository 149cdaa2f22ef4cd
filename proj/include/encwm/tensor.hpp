#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace encwm {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ", ";
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

// Dense row-major float32 array. `grad` is empty unless a gradient buffer
// has been allocated, in which case it has exactly numel() entries.
struct Tensor {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;

  Tensor() = default;

  explicit Tensor(Shape s, float fill = 0.0f)
      : shape(std::move(s)), data(shape_numel(shape), fill) {
    validate_shape();
  }

  Tensor(Shape s, std::vector<float> values)
      : shape(std::move(s)), data(std::move(values)) {
    validate_shape();
    if (data.size() != shape_numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  static Tensor parameter(Shape s, float fill = 0.0f) {
    Tensor t(std::move(s), fill);
    t.requires_grad = true;
    return t;
  }

  static Tensor vector(std::vector<float> values) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  // Row count / column count, treating rank-1 tensors as a single row.
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  bool has_grad() const { return !grad.empty(); }

  void zero_grad() {
    if (requires_grad) grad.assign(data.size(), 0.0f);
  }

  // Adds `g` into the gradient buffer, allocating it on first use.
  void accumulate_grad(const std::vector<float>& g) {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  float& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_values(const Tensor& other) const {
    return shape == other.shape && data == other.data;
  }

 private:
  void validate_shape() const {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " +
                                   shape_str(shape));
    }
  }
};

// Seeded generator. The integer stream comes from std::mt19937_64; the
// float conversions are written out so results do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw Error("Rng::below requires n > 0");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller standard normal.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Derives an independent child stream; `salt` distinguishes siblings.
  Rng fork(std::uint64_t salt) {
    return Rng(mix(next_u64() ^ mix(salt + 0x9e3779b97f4a7c15ULL)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Guard for norms in cosine similarity and normalization.
inline constexpr double kNormEpsilon = 1e-12;

inline bool all_finite(const Tensor& t) {
  for (float v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace encwm
