#pragma once

// Define-by-run reverse-mode differentiation over rank-2 tensors.
//
// Every op evaluates its forward value eagerly, appends a node to the Tape,
// and records a closure that pushes the node's gradient into its parents.
// Tape::backward walks the nodes in strict reverse insertion order, so a
// node is visited only after every consumer has contributed to its gradient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tubeground/error.hpp"
#include "tubeground/tensor.hpp"

namespace tubeground::ad {

enum class Op {
  leaf,
  matmul,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  tanh,
  sigmoid,
  exp,
  log,
  relu,
  softmax_rows,
  logsumexp_rows,
  cosine_rows,
  sum,
  mean,
  max,
  transpose,
  slice_rows,
  slice_cols,
  concat_rows,
  concat_cols,
  gather_rows,
  reshape,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::relu: return "relu";
    case Op::softmax_rows: return "softmax_rows";
    case Op::logsumexp_rows: return "logsumexp_rows";
    case Op::cosine_rows: return "cosine_rows";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::max: return "max";
    case Op::transpose: return "transpose";
    case Op::slice_rows: return "slice_rows";
    case Op::slice_cols: return "slice_cols";
    case Op::concat_rows: return "concat_rows";
    case Op::concat_cols: return "concat_cols";
    case Op::gather_rows: return "gather_rows";
    case Op::reshape: return "reshape";
  }
  return "?";
}

// Norms below this are treated as zero by cosine similarity.
inline constexpr double kCosineEps = 1e-12;

class Tape;

using BackwardFn = std::function<void(Tape&, std::size_t)>;

struct TapeNode {
  Tensor value;
  Tensor grad;
  Op op = Op::leaf;
  std::vector<std::size_t> parents;
  BackwardFn backward;
  bool needs_grad = false;
};

// Lightweight handle to a node on a tape. Valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  inline const Tensor& value() const;
  inline const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable input; gradient is accumulated.
  Var param(Tensor value) { return push_leaf(std::move(value), true); }

  // Data input; no gradient is propagated into it.
  Var constant(Tensor value) { return push_leaf(std::move(value), false); }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(std::size_t id) const { return nodes_[id]; }
  TapeNode& node(std::size_t id) { return nodes_[id]; }

  Var push(Tensor value, Op op, std::vector<std::size_t> parents, BackwardFn backward) {
    bool needs = false;
    for (std::size_t p : parents) {
      if (p >= nodes_.size()) throw ContractError("tape parent refers to a later node");
      needs = needs || nodes_[p].needs_grad;
    }
    TapeNode n;
    n.grad = Tensor(value.rows(), value.cols());
    n.value = std::move(value);
    n.op = op;
    n.parents = std::move(parents);
    n.backward = needs ? std::move(backward) : BackwardFn{};
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  // Seeds d(root)/d(root) = 1 and propagates to every node reachable from
  // the root. Nodes recorded after the root are ignored.
  void backward(Var root) {
    if (&root.tape() != this) throw ContractError("backward: root belongs to another tape");
    const Tensor& rv = nodes_[root.id()].value;
    if (!rv.is_scalar()) {
      throw ContractError("backward: root must be scalar, got shape " + rv.shape_string());
    }
    for (auto& n : nodes_) n.grad.fill(0.0);
    nodes_[root.id()].grad[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
  }

 private:
  Var push_leaf(Tensor value, bool needs_grad) {
    TapeNode n;
    n.grad = Tensor(value.rows(), value.cols());
    n.value = std::move(value);
    n.op = Op::leaf;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<TapeNode> nodes_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }
inline const Tensor& Var::grad() const { return tape_->node(id_).grad; }

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

inline std::string shapes(const Tensor& a, const Tensor& b) {
  return a.shape_string() + " and " + b.shape_string();
}

// out += a * b, plain triple loop in i-k-j order.
inline void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* o = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* br = b.data().data() + p * b.cols();
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out += a * b^T
inline void gemm_abt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(j, p);
      out(i, j) += s;
    }
  }
}

// out += a^T * b
inline void gemm_atb_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a(p, i);
      if (av == 0.0) continue;
      double* o = &out(i, 0);
      const double* br = b.data().data() + p * b.cols();
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// Shape rule shared by add/sub: equal shapes, or b is a 1xn row broadcast
// over the rows of a.
inline bool row_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return false;
  if (b.rows() == 1 && b.cols() == a.cols() && a.rows() > 0) return true;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shapes(a, b) +
                       " (only row-vector bias broadcast is supported)");
}

template <class F, class D>
Var unary(Var x, Op op, F&& f, D&& dfdx) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return x.tape().push(std::move(out), op, {x.id()},
                       [xi = x.id(), dfdx](Tape& t, std::size_t self) {
                         const TapeNode& n = t.node(self);
                         TapeNode& p = t.node(xi);
                         if (!p.needs_grad) return;
                         for (std::size_t i = 0; i < n.grad.size(); ++i) {
                           p.grad[i] += n.grad[i] * dfdx(p.value[i], n.value[i]);
                         }
                       });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + detail::shapes(av, bv));
  }
  Tensor out(av.rows(), bv.cols());
  detail::gemm_acc(av, bv, out);
  return a.tape().push(std::move(out), Op::matmul, {a.id(), b.id()},
                       [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
                         const Tensor& g = t.node(self).grad;
                         TapeNode& an = t.node(ai);
                         TapeNode& bn = t.node(bi);
                         if (an.needs_grad) detail::gemm_abt_acc(g, bn.value, an.grad);
                         if (bn.needs_grad) detail::gemm_atb_acc(an.value, g, bn.grad);
                       });
}

namespace detail {

inline Var add_sub(Var a, Var b, double sign, Op op) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bcast = row_broadcast(av, bv, op_name(op));
  Tensor out = av;
  const std::size_t n = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[bcast ? i % n : i];
  return a.tape().push(std::move(out), op, {a.id(), b.id()},
                       [ai = a.id(), bi = b.id(), bcast, sign, n](Tape& t, std::size_t self) {
                         const Tensor& g = t.node(self).grad;
                         TapeNode& an = t.node(ai);
                         TapeNode& bn = t.node(bi);
                         if (an.needs_grad) {
                           for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i];
                         }
                         if (bn.needs_grad) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             bn.grad[bcast ? i % n : i] += sign * g[i];
                           }
                         }
                       });
}

}  // namespace detail

// Elementwise sum; b may also be a 1xn bias row added to every row of a.
inline Var add(Var a, Var b) { return detail::add_sub(a, b, 1.0, Op::add); }
inline Var sub(Var a, Var b) { return detail::add_sub(a, b, -1.0, Op::sub); }
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) throw DimensionError("mul: shape mismatch " + detail::shapes(av, bv));
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().push(std::move(out), Op::mul, {a.id(), b.id()},
                       [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
                         const Tensor& g = t.node(self).grad;
                         TapeNode& an = t.node(ai);
                         TapeNode& bn = t.node(bi);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const double gi = g[i];
                           if (an.needs_grad) an.grad[i] += gi * bn.value[i];
                           if (bn.needs_grad) bn.grad[i] += gi * an.value[i];
                         }
                       });
}

inline Var scale(Var x, double c) {
  return detail::unary(
      x, Op::scale, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var x, double c) {
  return detail::unary(
      x, Op::add_scalar, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, Op::tanh, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
  return detail::unary(
      x, Op::sigmoid, [](double v) { return sigmoid_value(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var x) {
  return detail::unary(
      x, Op::exp, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return detail::unary(
      x, Op::log, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var relu(Var x) {
  return detail::unary(
      x, Op::relu, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  if (xv.cols() == 0 || xv.rows() == 0) {
    throw DimensionError("softmax: empty row, shape " + xv.shape_string());
  }
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row_span(r);
    auto o = out.row_span(r);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) z += (o[j] = std::exp(in[j] - m));
    for (double& v : o) v /= z;
  }
  return x.tape().push(std::move(out), Op::softmax_rows, {x.id()},
                       [xi = x.id()](Tape& t, std::size_t self) {
                         const TapeNode& n = t.node(self);
                         TapeNode& p = t.node(xi);
                         for (std::size_t r = 0; r < n.value.rows(); ++r) {
                           auto y = n.value.row_span(r);
                           auto g = n.grad.row_span(r);
                           double dot = 0.0;
                           for (std::size_t j = 0; j < y.size(); ++j) dot += g[j] * y[j];
                           auto pg = p.grad.row_span(r);
                           for (std::size_t j = 0; j < y.size(); ++j) pg[j] += y[j] * (g[j] - dot);
                         }
                       });
}

// log(sum_j exp(x_ij)) per row, m x n -> m x 1.
inline Var logsumexp_rows(Var x) {
  const Tensor& xv = x.value();
  if (xv.cols() == 0 || xv.rows() == 0) {
    throw DimensionError("logsumexp: empty row, shape " + xv.shape_string());
  }
  Tensor out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row_span(r);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - m);
    out(r, 0) = m + std::log(z);
  }
  return x.tape().push(std::move(out), Op::logsumexp_rows, {x.id()},
                       [xi = x.id()](Tape& t, std::size_t self) {
                         const TapeNode& n = t.node(self);
                         TapeNode& p = t.node(xi);
                         for (std::size_t r = 0; r < p.value.rows(); ++r) {
                           const double lse = n.value(r, 0);
                           const double g = n.grad(r, 0);
                           auto in = p.value.row_span(r);
                           auto pg = p.grad.row_span(r);
                           for (std::size_t j = 0; j < in.size(); ++j) {
                             pg[j] += g * std::exp(in[j] - lse);
                           }
                         }
                       });
}

// Cosine similarity of corresponding rows, m x n and m x n -> m x 1.
// A row whose norm is below kCosineEps yields 0 with zero gradient.
inline Var cosine_rows(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw DimensionError("cosine: length mismatch " + detail::shapes(av, bv));
  }
  const std::size_t m = av.rows();
  Tensor out(m, 1);
  for (std::size_t r = 0; r < m; ++r) {
    auto x = av.row_span(r);
    auto y = bv.row_span(r);
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      dot += x[j] * y[j];
      nx += x[j] * x[j];
      ny += y[j] * y[j];
    }
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    if (nx < kCosineEps || ny < kCosineEps) continue;
    out(r, 0) = std::clamp(dot / (nx * ny), -1.0, 1.0);
  }
  return a.tape().push(
      std::move(out), Op::cosine_rows, {a.id(), b.id()},
      [ai = a.id(), bi = b.id()](Tape& t, std::size_t self) {
        const TapeNode& n = t.node(self);
        TapeNode& an = t.node(ai);
        TapeNode& bn = t.node(bi);
        for (std::size_t r = 0; r < an.value.rows(); ++r) {
          auto x = an.value.row_span(r);
          auto y = bn.value.row_span(r);
          double dot = 0.0, nx = 0.0, ny = 0.0;
          for (std::size_t j = 0; j < x.size(); ++j) {
            dot += x[j] * y[j];
            nx += x[j] * x[j];
            ny += y[j] * y[j];
          }
          nx = std::sqrt(nx);
          ny = std::sqrt(ny);
          if (nx < kCosineEps || ny < kCosineEps) continue;
          const double g = n.grad(r, 0);
          const double inv = 1.0 / (nx * ny);
          const double c = dot * inv;
          auto gx = an.grad.row_span(r);
          auto gy = bn.grad.row_span(r);
          for (std::size_t j = 0; j < x.size(); ++j) {
            if (an.needs_grad) gx[j] += g * (y[j] * inv - c * x[j] / (nx * nx));
            if (bn.needs_grad) gy[j] += g * (x[j] * inv - c * y[j] / (ny * ny));
          }
        }
      });
}

// Cosine similarity of two 1xn rows, as a 1x1 tensor.
inline Var cosine(Var a, Var b) {
  if (a.rows() != 1 || b.rows() != 1) {
    throw DimensionError("cosine: expects row vectors, got " +
                         detail::shapes(a.value(), b.value()));
  }
  return cosine_rows(a, b);
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().push(Tensor::scalar(s), Op::sum, {x.id()},
                       [xi = x.id()](Tape& t, std::size_t self) {
                         const double g = t.node(self).grad[0];
                         for (double& v : t.node(xi).grad.data()) v += g;
                       });
}

inline Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().push(Tensor::scalar(s / static_cast<double>(n)), Op::mean, {x.id()},
                       [xi = x.id(), n](Tape& t, std::size_t self) {
                         const double g = t.node(self).grad[0] / static_cast<double>(n);
                         for (double& v : t.node(xi).grad.data()) v += g;
                       });
}

// Index of the maximum element in row-major order, lowest index on ties.
inline std::size_t argmax_index(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax of empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// Largest element as 1x1; the subgradient flows to the lowest-index argmax.
inline Var max(Var x) {
  if (x.value().empty()) throw ContractError("max of empty tensor");
  const std::size_t k = argmax_index(x.value().data());
  return x.tape().push(Tensor::scalar(x.value()[k]), Op::max, {x.id()},
                       [xi = x.id(), k](Tape& t, std::size_t self) {
                         t.node(xi).grad[k] += t.node(self).grad[0];
                       });
}

inline Var transpose(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.cols(), xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(j, i) = xv(i, j);
  return x.tape().push(std::move(out), Op::transpose, {x.id()},
                       [xi = x.id()](Tape& t, std::size_t self) {
                         const Tensor& g = t.node(self).grad;
                         Tensor& pg = t.node(xi).grad;
                         for (std::size_t i = 0; i < pg.rows(); ++i)
                           for (std::size_t j = 0; j < pg.cols(); ++j) pg(i, j) += g(j, i);
                       });
}

inline Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  if (start + count > xv.rows() || count == 0) {
    throw DimensionError("slice_rows [" + std::to_string(start) + ", +" +
                         std::to_string(count) + ") out of range for " + xv.shape_string());
  }
  const std::size_t n = xv.cols();
  Tensor out(count, n,
             std::vector<double>(xv.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                                 xv.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n)));
  return x.tape().push(std::move(out), Op::slice_rows, {x.id()},
                       [xi = x.id(), start, n](Tape& t, std::size_t self) {
                         const Tensor& g = t.node(self).grad;
                         Tensor& pg = t.node(xi).grad;
                         for (std::size_t i = 0; i < g.size(); ++i) pg[start * n + i] += g[i];
                       });
}

inline Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  if (start + count > xv.cols() || count == 0) {
    throw DimensionError("slice_cols [" + std::to_string(start) + ", +" +
                         std::to_string(count) + ") out of range for " + xv.shape_string());
  }
  Tensor out(xv.rows(), count);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, start + j);
  return x.tape().push(std::move(out), Op::slice_cols, {x.id()},
                       [xi = x.id(), start, count](Tape& t, std::size_t self) {
                         const Tensor& g = t.node(self).grad;
                         Tensor& pg = t.node(xi).grad;
                         for (std::size_t i = 0; i < g.rows(); ++i)
                           for (std::size_t j = 0; j < count; ++j) pg(i, start + j) += g(i, j);
                       });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " +
                           detail::shapes(parts.front().value(), p.value()));
    }
    rows += p.rows();
    ids.push_back(p.id());
  }
  std::vector<double> data;
  data.reserve(rows * n);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return parts.front().tape().push(Tensor(rows, n, std::move(data)), Op::concat_rows, ids,
                                   [ids](Tape& t, std::size_t self) {
                                     const Tensor& g = t.node(self).grad;
                                     std::size_t off = 0;
                                     for (std::size_t id : ids) {
                                       Tensor& pg = t.node(id).grad;
                                       for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[off + i];
                                       off += pg.size();
                                     }
                                   });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t m = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts.front(), p);
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " +
                           detail::shapes(parts.front().value(), p.value()));
    }
    cols += p.cols();
    ids.push_back(p.id());
  }
  Tensor out(m, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  return parts.front().tape().push(std::move(out), Op::concat_cols, ids,
                                   [ids](Tape& t, std::size_t self) {
                                     const Tensor& g = t.node(self).grad;
                                     std::size_t c0 = 0;
                                     for (std::size_t id : ids) {
                                       Tensor& pg = t.node(id).grad;
                                       for (std::size_t i = 0; i < pg.rows(); ++i)
                                         for (std::size_t j = 0; j < pg.cols(); ++j)
                                           pg(i, j) += g(i, c0 + j);
                                       c0 += pg.cols();
                                     }
                                   });
}

// out row r = x row index[r]; gradients scatter-add back.
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor out(index.size(), n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= xv.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) +
                           " out of range for " + xv.shape_string());
    }
    std::copy_n(xv.data().data() + index[r] * n, n, out.data().data() + r * n);
  }
  return x.tape().push(std::move(out), Op::gather_rows, {x.id()},
                       [xi = x.id(), index = std::move(index), n](Tape& t, std::size_t self) {
                         const Tensor& g = t.node(self).grad;
                         Tensor& pg = t.node(xi).grad;
                         for (std::size_t r = 0; r < index.size(); ++r)
                           for (std::size_t j = 0; j < n; ++j) pg(index[r], j) += g(r, j);
                       });
}

inline Var reshape(Var x, std::size_t rows, std::size_t cols) {
  const Tensor& xv = x.value();
  if (rows * cols != xv.size()) {
    throw DimensionError("reshape " + xv.shape_string() + " to " +
                         Tensor::shape_string(rows, cols));
  }
  return x.tape().push(Tensor(rows, cols, xv.values()), Op::reshape, {x.id()},
                       [xi = x.id()](Tape& t, std::size_t self) {
                         const Tensor& g = t.node(self).grad;
                         Tensor& pg = t.node(xi).grad;
                         for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
                       });
}

}  // namespace tubeground::ad
