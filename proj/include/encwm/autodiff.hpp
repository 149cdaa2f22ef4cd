#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "encwm/tensor.hpp"

namespace encwm {

namespace kernels {

// C[m,n] = A[m,k] * B[k,n], accumulated in double.
inline void gemm_nn(const float* a, const float* b, float* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    float* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
  }
}

inline std::vector<float> transpose(const float* a, std::size_t rows,
                                    std::size_t cols) {
  std::vector<float> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

// C[m,n] = A[m,k] * B[n,k]^T
inline void gemm_nt(const float* a, const float* b, float* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  const auto bt = transpose(b, n, k);
  gemm_nn(a, bt.data(), c, m, k, n);
}

// C[k,n] = A[m,k]^T * B[m,n]
inline void gemm_tn(const float* a, const float* b, float* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  std::vector<double> acc(k * n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const float* arow = a + r * k;
    const float* brow = b + r * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* out = acc.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
    }
  }
  for (std::size_t i = 0; i < k * n; ++i) c[i] = static_cast<float>(acc[i]);
}

}  // namespace kernels

class Graph;

// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  bool valid() const { return graph != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

// Append-only tape of recorded operations. Nodes are stored in creation
// order, so every node's inputs precede it and reverse iteration is a valid
// reverse topological order.
class Graph {
 public:
  using BackwardFn = std::function<void(const std::vector<float>& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Constant input; never receives a gradient.
  Var input(Tensor value) {
    value.requires_grad = false;
    value.grad.clear();
    return push("input", {}, std::move(value), false, nullptr);
  }

  // Leaf bound to a parameter tensor. Gradients are accumulated into
  // `param.grad` on backward when `param.requires_grad` is set. The tensor
  // must outlive the graph.
  Var param(Tensor& p) {
    Node node;
    node.op = "param";
    node.external = &p;
    node.needs_grad = p.requires_grad;
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  // Leaf that reads a tensor without ever tracking its gradient.
  Var frozen(const Tensor& p) {
    Node node;
    node.op = "frozen";
    node.external = const_cast<Tensor*>(&p);
    node.needs_grad = false;
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const {
    check_owned(v, "value");
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }

  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const {
    return nodes_.at(id).inputs;
  }

  // Gradient of the last backward pass w.r.t. node `v` (empty if none).
  const std::vector<float>& grad(Var v) const {
    check_owned(v, "grad");
    return nodes_[v.id].grad;
  }

  // Reverse-mode sweep from a scalar loss. Parameter gradients accumulate
  // additively across calls until the caller zeroes them.
  void backward(Var loss) {
    if (nodes_.empty() || !loss.valid()) {
      throw Error("backward called before any forward computation");
    }
    check_owned(loss, "backward");
    if (value(loss).numel() != 1) {
      throw ShapeError("backward requires a scalar loss, node " +
                       std::to_string(loss.id) + " has shape " +
                       shape_str(value(loss).shape));
    }
    for (auto& n : nodes_) n.grad.clear();
    nodes_[loss.id].grad.assign(1, 1.0f);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.external) {
        if (n.external->requires_grad) n.external->accumulate_grad(n.grad);
        continue;
      }
      if (n.backward) n.backward(n.grad);
    }
  }

  // Adds `g` into the pending gradient of node `id` (used by op closures).
  void accumulate(std::size_t id, const std::vector<float>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }
  }

  // Records a computed node. `backward` may be empty for constants.
  Var push(std::string op, std::vector<std::size_t> inputs, Tensor value,
           bool needs_grad, BackwardFn backward) {
    Node node;
    node.op = std::move(op);
    node.inputs = std::move(inputs);
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  bool any_needs_grad(std::initializer_list<Var> vs) const {
    for (const auto& v : vs)
      if (nodes_[v.id].needs_grad) return true;
    return false;
  }

  std::size_t next_id() const { return nodes_.size(); }

  void check_owned(Var v, const char* what) const {
    if (v.graph != this || v.id >= nodes_.size()) {
      throw Error(std::string(what) + ": variable does not belong to this graph");
    }
  }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor* external = nullptr;
    bool needs_grad = false;
    std::vector<float> grad;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (!graph) throw Error("use of an unbound variable");
  return graph->value(*this);
}

namespace detail {

inline Graph& same_graph(Var a, Var b, const char* op) {
  if (!a.valid() || a.graph != b.graph) {
    throw Error(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph;
}

[[noreturn]] inline void shape_fail(const Graph& g, const char* op,
                                    const std::string& detail) {
  throw ShapeError("node " + std::to_string(g.next_id()) + " (" + op +
                   "): " + detail);
}

// Views a rank-1 or rank-2 tensor as a matrix.
inline std::pair<std::size_t, std::size_t> as_matrix(const Graph& g,
                                                     const Tensor& t,
                                                     const char* op) {
  if (t.rank() == 1) return {1, t.shape[0]};
  if (t.rank() == 2) return {t.shape[0], t.shape[1]};
  shape_fail(g, op, "expected rank 1 or 2, got " + shape_str(t.shape));
}

}  // namespace detail

// a[m,k] x b[k,n], or a[m,k] x b[n,k]^T when transpose_b is set.
inline Var matmul(Var a, Var b, bool transpose_b = false) {
  Graph& g = detail::same_graph(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) {
    detail::shape_fail(g, "matmul", "operands must be rank 2, got " +
                                        shape_str(av.shape) + " and " +
                                        shape_str(bv.shape));
  }
  const std::size_t m = av.shape[0], k = av.shape[1];
  const std::size_t n = transpose_b ? bv.shape[0] : bv.shape[1];
  const std::size_t bk = transpose_b ? bv.shape[1] : bv.shape[0];
  if (bk != k) {
    detail::shape_fail(g, "matmul", "inner dimensions differ: " +
                                        shape_str(av.shape) + " x " +
                                        shape_str(bv.shape) +
                                        (transpose_b ? "^T" : ""));
  }
  Tensor out({m, n});
  if (transpose_b) {
    kernels::gemm_nt(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
  } else {
    kernels::gemm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
  }
  const std::size_t ai = a.id, bi = b.id;
  return g.push("matmul", {ai, bi}, std::move(out), g.any_needs_grad({a, b}),
                [&g, ai, bi, m, k, n, transpose_b](const std::vector<float>& go) {
                  const Tensor& av = g.value(Var{&g, ai});
                  const Tensor& bv = g.value(Var{&g, bi});
                  if (g.needs_grad(Var{&g, ai})) {
                    std::vector<float> ga(m * k);
                    if (transpose_b) {
                      // dA = dC * B with B as [n,k]
                      kernels::gemm_nn(go.data(), bv.data.data(), ga.data(), m, n, k);
                    } else {
                      kernels::gemm_nt(go.data(), bv.data.data(), ga.data(), m, n, k);
                    }
                    g.accumulate(ai, ga);
                  }
                  if (g.needs_grad(Var{&g, bi})) {
                    std::vector<float> gb(k * n);
                    if (transpose_b) {
                      // dB[n,k] = dC^T * A
                      kernels::gemm_tn(go.data(), av.data.data(), gb.data(), m, n, k);
                    } else {
                      kernels::gemm_tn(av.data.data(), go.data(), gb.data(), m, k, n);
                    }
                    g.accumulate(bi, gb);
                  }
                });
}

// x[m,n] + bias[n] broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  Graph& g = detail::same_graph(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  auto [m, n] = detail::as_matrix(g, xv, "add_bias");
  if (bv.rank() != 1 || bv.shape[0] != n) {
    detail::shape_fail(g, "add_bias", "bias " + shape_str(bv.shape) +
                                          " does not match columns of " +
                                          shape_str(xv.shape));
  }
  Tensor out = xv;
  out.requires_grad = false;
  out.grad.clear();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += bv.data[j];
  const std::size_t xi = x.id, bi = bias.id;
  const std::size_t rows = m, cols = n;
  return g.push("add_bias", {xi, bi}, std::move(out), g.any_needs_grad({x, bias}),
                [&g, xi, bi, rows, cols](const std::vector<float>& go) {
                  g.accumulate(xi, go);
                  if (g.needs_grad(Var{&g, bi})) {
                    std::vector<double> acc(cols, 0.0);
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < cols; ++j) acc[j] += go[i * cols + j];
                    std::vector<float> gb(cols);
                    for (std::size_t j = 0; j < cols; ++j) gb[j] = static_cast<float>(acc[j]);
                    g.accumulate(bi, gb);
                  }
                });
}

inline Var relu(Var x) {
  Graph& g = *x.graph;
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.numel(); ++i)
    out.data[i] = xv.data[i] > 0.0f ? xv.data[i] : 0.0f;
  const std::size_t xi = x.id;
  return g.push("relu", {xi}, std::move(out), g.needs_grad(x),
                [&g, xi](const std::vector<float>& go) {
                  const Tensor& xv = g.value(Var{&g, xi});
                  std::vector<float> gx(go.size());
                  for (std::size_t i = 0; i < go.size(); ++i)
                    gx[i] = xv.data[i] > 0.0f ? go[i] : 0.0f;
                  g.accumulate(xi, gx);
                });
}

namespace detail {

inline void require_same_shape(const Graph& g, const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape != b.shape) {
    shape_fail(g, op, "shapes differ: " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
  }
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "add");
  detail::require_same_shape(g, a.value(), b.value(), "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = a.value().data[i] + b.value().data[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.push("add", {ai, bi}, std::move(out), g.any_needs_grad({a, b}),
                [&g, ai, bi](const std::vector<float>& go) {
                  g.accumulate(ai, go);
                  g.accumulate(bi, go);
                });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "sub");
  detail::require_same_shape(g, a.value(), b.value(), "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = a.value().data[i] - b.value().data[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.push("sub", {ai, bi}, std::move(out), g.any_needs_grad({a, b}),
                [&g, ai, bi](const std::vector<float>& go) {
                  g.accumulate(ai, go);
                  std::vector<float> neg(go.size());
                  for (std::size_t i = 0; i < go.size(); ++i) neg[i] = -go[i];
                  g.accumulate(bi, neg);
                });
}

// Element-wise product.
inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "mul");
  detail::require_same_shape(g, a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data[i] = a.value().data[i] * b.value().data[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.push("mul", {ai, bi}, std::move(out), g.any_needs_grad({a, b}),
                [&g, ai, bi](const std::vector<float>& go) {
                  const Tensor& av = g.value(Var{&g, ai});
                  const Tensor& bv = g.value(Var{&g, bi});
                  if (g.needs_grad(Var{&g, ai})) {
                    std::vector<float> ga(go.size());
                    for (std::size_t i = 0; i < go.size(); ++i) ga[i] = go[i] * bv.data[i];
                    g.accumulate(ai, ga);
                  }
                  if (g.needs_grad(Var{&g, bi})) {
                    std::vector<float> gb(go.size());
                    for (std::size_t i = 0; i < go.size(); ++i) gb[i] = go[i] * av.data[i];
                    g.accumulate(bi, gb);
                  }
                });
}

inline Var scale(Var x, float factor) {
  Graph& g = *x.graph;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = x.value().data[i] * factor;
  const std::size_t xi = x.id;
  return g.push("scale", {xi}, std::move(out), g.needs_grad(x),
                [&g, xi, factor](const std::vector<float>& go) {
                  std::vector<float> gx(go.size());
                  for (std::size_t i = 0; i < go.size(); ++i) gx[i] = go[i] * factor;
                  g.accumulate(xi, gx);
                });
}

// Sum of all elements, shape [1].
inline Var sum(Var x) {
  Graph& g = *x.graph;
  double acc = 0.0;
  for (float v : x.value().data) acc += v;
  const std::size_t xi = x.id;
  const std::size_t n = x.value().numel();
  return g.push("sum", {xi}, Tensor({1}, static_cast<float>(acc)), g.needs_grad(x),
                [&g, xi, n](const std::vector<float>& go) {
                  g.accumulate(xi, std::vector<float>(n, go[0]));
                });
}

inline Var mean(Var x) {
  const auto n = static_cast<float>(x.value().numel());
  return scale(sum(x), 1.0f / n);
}

inline Var reshape(Var x, Shape shape) {
  Graph& g = *x.graph;
  if (shape_numel(shape) != x.value().numel()) {
    detail::shape_fail(g, "reshape", "cannot reshape " + shape_str(x.shape()) +
                                         " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.value().data);
  const std::size_t xi = x.id;
  return g.push("reshape", {xi}, std::move(out), g.needs_grad(x),
                [&g, xi](const std::vector<float>& go) { g.accumulate(xi, go); });
}

// Row-wise L2 normalization. Rows whose norm is <= kNormEpsilon map to zero
// and pass no gradient.
inline Var l2_normalize(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  auto [m, n] = detail::as_matrix(g, xv, "l2_normalize");
  Tensor out(xv.shape);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += double(xv.data[i * n + j]) * xv.data[i * n + j];
    norms[i] = std::sqrt(ss);
    if (!std::isfinite(norms[i])) {
      // Overflowed or NaN rows stay non-finite so divergence is visible.
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] = std::numeric_limits<float>::quiet_NaN();
    } else if (norms[i] > kNormEpsilon) {
      for (std::size_t j = 0; j < n; ++j)
        out.data[i * n + j] = static_cast<float>(xv.data[i * n + j] / norms[i]);
    }
  }
  const std::size_t xi = x.id, oi = g.next_id();
  const std::size_t rows = m, cols = n;
  return g.push("l2_normalize", {xi}, std::move(out), g.needs_grad(x),
                [&g, xi, oi, rows, cols, norms](const std::vector<float>& go) {
                  const Tensor& y = g.value(Var{&g, oi});
                  std::vector<float> gx(rows * cols, 0.0f);
                  for (std::size_t i = 0; i < rows; ++i) {
                    if (norms[i] <= kNormEpsilon) continue;
                    double proj = 0.0;
                    for (std::size_t j = 0; j < cols; ++j)
                      proj += double(go[i * cols + j]) * y.data[i * cols + j];
                    for (std::size_t j = 0; j < cols; ++j) {
                      gx[i * cols + j] = static_cast<float>(
                          (go[i * cols + j] - proj * y.data[i * cols + j]) / norms[i]);
                    }
                  }
                  g.accumulate(xi, gx);
                });
}

// Per-row dot product of two equally shaped matrices, shape [rows].
inline Var row_dot(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "row_dot");
  detail::require_same_shape(g, a.value(), b.value(), "row_dot");
  auto [m, n] = detail::as_matrix(g, a.value(), "row_dot");
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      acc += double(a.value().data[i * n + j]) * b.value().data[i * n + j];
    out.data[i] = static_cast<float>(acc);
  }
  const std::size_t ai = a.id, bi = b.id, rows = m, cols = n;
  return g.push("row_dot", {ai, bi}, std::move(out), g.any_needs_grad({a, b}),
                [&g, ai, bi, rows, cols](const std::vector<float>& go) {
                  const Tensor& av = g.value(Var{&g, ai});
                  const Tensor& bv = g.value(Var{&g, bi});
                  std::vector<float> ga(rows * cols), gb(rows * cols);
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) {
                      ga[i * cols + j] = go[i] * bv.data[i * cols + j];
                      gb[i * cols + j] = go[i] * av.data[i * cols + j];
                    }
                  g.accumulate(ai, ga);
                  g.accumulate(bi, gb);
                });
}

// Per-row cosine similarity, shape [rows]; zero for degenerate rows.
inline Var cosine_rows(Var a, Var b) { return row_dot(l2_normalize(a), l2_normalize(b)); }

// Horizontal concatenation of a[m,p] and b[m,q] into [m,p+q].
inline Var concat_cols(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "concat_cols");
  auto [m, p] = detail::as_matrix(g, a.value(), "concat_cols");
  auto [mb, q] = detail::as_matrix(g, b.value(), "concat_cols");
  if (m != mb) {
    detail::shape_fail(g, "concat_cols", "row counts differ: " +
                                             shape_str(a.shape()) + " vs " +
                                             shape_str(b.shape()));
  }
  Tensor out({m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.value().data.begin() + i * p, p, out.data.begin() + i * (p + q));
    std::copy_n(b.value().data.begin() + i * q, q, out.data.begin() + i * (p + q) + p);
  }
  const std::size_t ai = a.id, bi = b.id, rows = m, pc = p, qc = q;
  return g.push("concat_cols", {ai, bi}, std::move(out), g.any_needs_grad({a, b}),
                [&g, ai, bi, rows, pc, qc](const std::vector<float>& go) {
                  std::vector<float> ga(rows * pc), gb(rows * qc);
                  for (std::size_t i = 0; i < rows; ++i) {
                    std::copy_n(go.begin() + i * (pc + qc), pc, ga.begin() + i * pc);
                    std::copy_n(go.begin() + i * (pc + qc) + pc, qc, gb.begin() + i * qc);
                  }
                  g.accumulate(ai, ga);
                  g.accumulate(bi, gb);
                });
}

// Replaces the diagonal of a square matrix with a constant.
inline Var fill_diagonal(Var x, float value) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.shape[0] != xv.shape[1]) {
    detail::shape_fail(g, "fill_diagonal", "expected a square matrix, got " +
                                               shape_str(xv.shape));
  }
  Tensor out = xv;
  out.requires_grad = false;
  out.grad.clear();
  const std::size_t n = xv.shape[0];
  for (std::size_t i = 0; i < n; ++i) out.data[i * n + i] = value;
  const std::size_t xi = x.id;
  return g.push("fill_diagonal", {xi}, std::move(out), g.needs_grad(x),
                [&g, xi, n](const std::vector<float>& go) {
                  std::vector<float> gx = go;
                  for (std::size_t i = 0; i < n; ++i) gx[i * n + i] = 0.0f;
                  g.accumulate(xi, gx);
                });
}

// Mean softmax cross-entropy of logits[m,c] against integer targets.
// Entries equal to -infinity are treated as excluded from the softmax.
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& targets) {
  Graph& g = *logits.graph;
  const Tensor& lv = logits.value();
  auto [m, c] = detail::as_matrix(g, lv, "cross_entropy");
  if (targets.size() != m) {
    detail::shape_fail(g, "cross_entropy", "expected " + std::to_string(m) +
                                               " targets, got " +
                                               std::to_string(targets.size()));
  }
  std::vector<float> probs(m * c);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= c) {
      detail::shape_fail(g, "cross_entropy", "target " + std::to_string(targets[i]) +
                                                 " out of range for " +
                                                 std::to_string(c) + " classes");
    }
    const float* row = lv.data.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, double(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(double(row[j]) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j)
      probs[i * c + j] = static_cast<float>(std::exp(double(row[j]) - lse));
    total += lse - row[targets[i]];
  }
  const std::size_t li = logits.id, rows = m, cols = c;
  return g.push("cross_entropy", {li}, Tensor({1}, static_cast<float>(total / double(m))),
                g.needs_grad(logits),
                [&g, li, rows, cols, targets, probs = std::move(probs)](
                    const std::vector<float>& go) {
                  std::vector<float> gl(rows * cols);
                  const double s = go[0] / double(rows);
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) {
                      double p = probs[i * cols + j];
                      if (j == targets[i]) p -= 1.0;
                      gl[i * cols + j] = static_cast<float>(s * p);
                    }
                  g.accumulate(li, gl);
                });
}

// Scalar dot product of two equally shaped tensors.
inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

}  // namespace encwm
