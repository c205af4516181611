#pragma once

// Reverse-mode automatic differentiation on a dynamically recorded tape.
// The graph is re-recorded every forward pass; backward walks the node list
// in strict reverse execution order and accumulates into any parameter
// leaves that were placed on the tape.
//
// Conventions (fixed so tests can be exact):
//   relu subgradient at 0 is 0; clip subgradient at the boundaries is 0;
//   minimum-elementwise ties route the gradient to the first input.

#include <algorithm>
#include <cmath>
#include <limits>

#include "noisymarl/params.hpp"
#include "noisymarl/tensor.hpp"

namespace noisymarl::autodiff {

enum class Op {
  kLeaf,
  kParamLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kTanh,
  kRelu,
  kExp,
  kLog,
  kSquare,
  kNeg,
  kSum,
  kMean,
  kConcat,
  kSoftmax,
  kLogSoftmax,
  kGather,
  kClip,
  kMin,
  kBroadcastScalar,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kParamLeaf: return "param-leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "elementwise-multiply";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kNeg: return "negate";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kConcat: return "concat-last-axis";
    case Op::kSoftmax: return "softmax-last-axis";
    case Op::kLogSoftmax: return "log-softmax-last-axis";
    case Op::kGather: return "gather-index";
    case Op::kClip: return "clip";
    case Op::kMin: return "minimum-elementwise";
    case Op::kBroadcastScalar: return "broadcast-scalar";
  }
  return "?";
}

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  // --- leaves ---

  Var constant(Tensor t) {
    Node n;
    n.op = Op::kLeaf;
    n.shape = std::move(t.shape);
    n.data = std::move(t.data);
    return push(std::move(n));
  }
  Var constant(Shape shape, std::vector<double> data) {
    return constant(Tensor(std::move(shape), std::move(data)));
  }
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  Var param(Parameter& p) {
    Node n;
    n.op = Op::kParamLeaf;
    n.shape = p.value.shape;
    n.data = p.value.data;
    n.param = &p;
    return push(std::move(n));
  }

  // --- primitives ---

  Var matmul(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0])
      fail("matmul", "shapes " + shape_str(na.shape) + " x " + shape_str(nb.shape));
    const int m = na.shape[0], k = na.shape[1], n2 = nb.shape[1];
    Node out;
    out.op = Op::kMatmul;
    out.shape = {m, n2};
    out.data.assign(static_cast<std::size_t>(m) * n2, 0.0);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const double av = na.data[i * k + p];
        if (av == 0.0) continue;
        for (int j = 0; j < n2; ++j) out.data[i * n2 + j] += av * nb.data[p * n2 + j];
      }
    out.in0 = a.id;
    out.in1 = b.id;
    return push(std::move(out));
  }

  Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }
  Var minimum(Var a, Var b) { return binary(Op::kMin, a, b); }

  Var tanh_(Var x) {
    return unary(Op::kTanh, x, [](double v) { return std::tanh(v); });
  }
  Var relu(Var x) {
    return unary(Op::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; });
  }
  Var exp_(Var x) {
    return unary(Op::kExp, x, [](double v) { return std::exp(v); });
  }
  Var log_(Var x) {
    return unary(Op::kLog, x, [](double v) { return std::log(v); });
  }
  Var square(Var x) {
    return unary(Op::kSquare, x, [](double v) { return v * v; });
  }
  Var neg(Var x) {
    return unary(Op::kNeg, x, [](double v) { return -v; });
  }

  Var sum(Var x) { return reduce(Op::kSum, x); }
  Var mean(Var x) { return reduce(Op::kMean, x); }

  Var concat_cols(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.shape.size() != nb.shape.size() || na.shape.size() > 2)
      fail("concat-last-axis", "shapes " + shape_str(na.shape) + ", " + shape_str(nb.shape));
    Node out;
    out.op = Op::kConcat;
    out.in0 = a.id;
    out.in1 = b.id;
    if (na.shape.size() == 1) {
      out.shape = {na.shape[0] + nb.shape[0]};
      out.data = na.data;
      out.data.insert(out.data.end(), nb.data.begin(), nb.data.end());
    } else {
      if (na.shape[0] != nb.shape[0])
        fail("concat-last-axis", "row mismatch " + shape_str(na.shape) + ", " + shape_str(nb.shape));
      const int rows = na.shape[0], ca = na.shape[1], cb = nb.shape[1];
      out.shape = {rows, ca + cb};
      out.data.resize(static_cast<std::size_t>(rows) * (ca + cb));
      for (int r = 0; r < rows; ++r) {
        std::copy_n(&na.data[r * ca], ca, &out.data[r * (ca + cb)]);
        std::copy_n(&nb.data[r * cb], cb, &out.data[r * (ca + cb) + ca]);
      }
    }
    return push(std::move(out));
  }

  Var softmax(Var x) { return softmax_like(Op::kSoftmax, x); }
  Var log_softmax(Var x) { return softmax_like(Op::kLogSoftmax, x); }

  // (R,C) with one column index per row -> (R,1).
  Var gather(Var x, std::vector<int> indices) {
    const Node& nx = node(x);
    if (nx.shape.size() != 2 || indices.size() != static_cast<std::size_t>(nx.shape[0]))
      fail("gather-index", "shape " + shape_str(nx.shape) + " with " +
                               std::to_string(indices.size()) + " indices");
    const int rows = nx.shape[0], cols = nx.shape[1];
    Node out;
    out.op = Op::kGather;
    out.shape = {rows, 1};
    out.data.resize(rows);
    for (int r = 0; r < rows; ++r) {
      if (indices[r] < 0 || indices[r] >= cols)
        fail("gather-index", "index " + std::to_string(indices[r]) + " out of range for " +
                                 shape_str(nx.shape));
      out.data[r] = nx.data[r * cols + indices[r]];
    }
    out.in0 = x.id;
    out.indices = std::move(indices);
    return push(std::move(out));
  }

  Var clip(Var x, double lo, double hi) {
    if (!(lo <= hi)) fail("clip", "lo > hi");
    const Node& nx = node(x);
    Node out;
    out.op = Op::kClip;
    out.shape = nx.shape;
    out.data.resize(nx.data.size());
    for (std::size_t i = 0; i < nx.data.size(); ++i)
      out.data[i] = std::min(hi, std::max(lo, nx.data[i]));
    out.in0 = x.id;
    out.lo = lo;
    out.hi = hi;
    return push(std::move(out));
  }

  Var broadcast_scalar(Var s, Shape target) {
    const Node& ns = node(s);
    if (ns.data.size() != 1)
      fail("broadcast-scalar", "source shape " + shape_str(ns.shape) + " is not scalar");
    Node out;
    out.op = Op::kBroadcastScalar;
    out.shape = std::move(target);
    out.data.assign(numel(out.shape), ns.data[0]);
    out.in0 = s.id;
    return push(std::move(out));
  }

  // --- compositions ---

  Var scale(Var x, double c) { return mul(x, scalar(c)); }
  Var add_const(Var x, double c) { return add(x, scalar(c)); }
  Var sigmoid(Var x) { return add_const(scale(tanh_(scale(x, 0.5)), 0.5), 0.5); }
  Var abs_(Var x) { return add(relu(x), relu(neg(x))); }
  Var elu(Var x) { return add_const(add(relu(x), exp_(minimum(x, scalar(0.0)))), -1.0); }
  Var ones(Shape shape) { return constant(Tensor(std::move(shape), std::vector<double>(numel(shape), 1.0))); }

  // --- access ---

  const Shape& shape(Var v) const { return node(v).shape; }
  const std::vector<double>& data(Var v) const { return node(v).data; }
  const std::vector<double>& grad(Var v) const { return node(v).grad; }
  double value(Var v) const {
    const Node& n = node(v);
    if (n.data.size() != 1) fail("Tape::value", "node is not scalar: " + shape_str(n.shape));
    return n.data[0];
  }
  bool is_leaf(Var v) const {
    Op op = node(v).op;
    return op == Op::kLeaf || op == Op::kParamLeaf;
  }
  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // Smallest distance of any recorded relu/clip input from its
  // non-differentiable point; used to screen finite-difference inputs.
  // minimum-elementwise ties are not scanned by default: a tie is only a
  // kink when the two inputs are different functions, and in the losses
  // built here (PPO min of surrogate vs clipped surrogate, elu's min(x,0))
  // those points coincide with clip/relu kinks that are scanned.
  double min_kink_margin(bool include_min_ties = false) const {
    double margin = std::numeric_limits<double>::infinity();
    for (const Node& n : nodes_) {
      if (n.op == Op::kRelu) {
        for (double v : nodes_[n.in0].data) margin = std::min(margin, std::abs(v));
      } else if (n.op == Op::kClip) {
        for (double v : nodes_[n.in0].data) {
          if (std::isfinite(n.lo)) margin = std::min(margin, std::abs(v - n.lo));
          if (std::isfinite(n.hi)) margin = std::min(margin, std::abs(v - n.hi));
        }
      } else if (include_min_ties && n.op == Op::kMin) {
        const auto& a = nodes_[n.in0].data;
        const auto& b = nodes_[n.in1].data;
        for (std::size_t i = 0; i < a.size(); ++i)
          margin = std::min(margin, std::abs(a[i] - b[i]));
      }
    }
    return margin;
  }

  void backward(Var loss) {
    Node& ln = node(loss);
    if (ln.data.size() != 1)
      fail("backward", std::string("loss must be scalar, got shape ") + shape_str(ln.shape));
    for (Node& n : nodes_) n.grad.assign(n.data.size(), 0.0);
    ln.grad[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) backward_node(id);
    for (Node& n : nodes_) {
      if (n.op == Op::kParamLeaf)
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
    }
  }

 private:
  struct Node {
    Op op = Op::kLeaf;
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    int in0 = -1, in1 = -1;
    double lo = 0.0, hi = 0.0;
    std::vector<int> indices;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }
  Node& node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      fail("Tape", "invalid node handle");
    return nodes_[v.id];
  }
  const Node& node(Var v) const { return const_cast<Tape*>(this)->node(v); }

  template <class F>
  Var unary(Op op, Var x, F f) {
    const Node& nx = node(x);
    Node out;
    out.op = op;
    out.shape = nx.shape;
    out.data.resize(nx.data.size());
    for (std::size_t i = 0; i < nx.data.size(); ++i) out.data[i] = f(nx.data[i]);
    out.in0 = x.id;
    return push(std::move(out));
  }

  // Same-shape elementwise; a 1-element operand broadcasts via an explicit
  // broadcast-scalar node.
  Var binary(Op op, Var a, Var b) {
    if (node(a).data.size() == 1 && node(b).data.size() != 1)
      a = broadcast_scalar(a, node(b).shape);
    else if (node(b).data.size() == 1 && node(a).data.size() != 1)
      b = broadcast_scalar(b, node(a).shape);
    else if (node(a).data.size() == 1 && node(b).data.size() == 1 &&
             node(a).shape != node(b).shape)
      b = broadcast_scalar(b, node(a).shape);
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.shape != nb.shape)
      fail(op_name(op), "shapes " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
    Node out;
    out.op = op;
    out.shape = na.shape;
    out.data.resize(na.data.size());
    for (std::size_t i = 0; i < na.data.size(); ++i) {
      switch (op) {
        case Op::kAdd: out.data[i] = na.data[i] + nb.data[i]; break;
        case Op::kSub: out.data[i] = na.data[i] - nb.data[i]; break;
        case Op::kMul: out.data[i] = na.data[i] * nb.data[i]; break;
        case Op::kMin: out.data[i] = std::min(na.data[i], nb.data[i]); break;
        default: fail("binary", "bad op");
      }
    }
    out.in0 = a.id;
    out.in1 = b.id;
    return push(std::move(out));
  }

  Var reduce(Op op, Var x) {
    const Node& nx = node(x);
    double acc = 0.0;
    for (double v : nx.data) acc += v;
    if (op == Op::kMean) acc /= static_cast<double>(nx.data.size());
    Node out;
    out.op = op;
    out.shape = {1};
    out.data = {acc};
    out.in0 = x.id;
    return push(std::move(out));
  }

  Var softmax_like(Op op, Var x) {
    const Node& nx = node(x);
    if (nx.shape.empty() || nx.shape.size() > 2)
      fail(op_name(op), "shape " + shape_str(nx.shape));
    const int cols = nx.shape.back();
    const int rows = static_cast<int>(nx.data.size()) / cols;
    Node out;
    out.op = op;
    out.shape = nx.shape;
    out.data.resize(nx.data.size());
    for (int r = 0; r < rows; ++r) {
      const double* in = &nx.data[static_cast<std::size_t>(r) * cols];
      double* o = &out.data[static_cast<std::size_t>(r) * cols];
      double mx = in[0];
      for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
      double z = 0.0;
      for (int c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
      if (op == Op::kSoftmax) {
        for (int c = 0; c < cols; ++c) o[c] = std::exp(in[c] - mx) / z;
      } else {
        const double lz = std::log(z) + mx;
        for (int c = 0; c < cols; ++c) o[c] = in[c] - lz;
      }
    }
    out.in0 = x.id;
    return push(std::move(out));
  }

  void backward_node(int id) {
    Node& n = nodes_[id];
    bool any = false;
    for (double g : n.grad)
      if (g != 0.0) {
        any = true;
        break;
      }
    if (!any) return;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kParamLeaf:
        break;
      case Op::kMatmul: {
        Node& a = nodes_[n.in0];
        Node& b = nodes_[n.in1];
        const int m = a.shape[0], k = a.shape[1], n2 = b.shape[1];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n2; ++j) {
            const double g = n.grad[i * n2 + j];
            if (g == 0.0) continue;
            for (int p = 0; p < k; ++p) {
              a.grad[i * k + p] += g * b.data[p * n2 + j];
              b.grad[p * n2 + j] += g * a.data[i * k + p];
            }
          }
        break;
      }
      case Op::kAdd: {
        accumulate(n.in0, n.grad, +1.0);
        accumulate(n.in1, n.grad, +1.0);
        break;
      }
      case Op::kSub: {
        accumulate(n.in0, n.grad, +1.0);
        accumulate(n.in1, n.grad, -1.0);
        break;
      }
      case Op::kMul: {
        Node& a = nodes_[n.in0];
        Node& b = nodes_[n.in1];
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          a.grad[i] += n.grad[i] * b.data[i];
          b.grad[i] += n.grad[i] * a.data[i];
        }
        break;
      }
      case Op::kTanh: {
        Node& a = nodes_[n.in0];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          a.grad[i] += n.grad[i] * (1.0 - n.data[i] * n.data[i]);
        break;
      }
      case Op::kRelu: {
        Node& a = nodes_[n.in0];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          if (a.data[i] > 0.0) a.grad[i] += n.grad[i];
        break;
      }
      case Op::kExp: {
        Node& a = nodes_[n.in0];
        for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] * n.data[i];
        break;
      }
      case Op::kLog: {
        Node& a = nodes_[n.in0];
        for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i] / a.data[i];
        break;
      }
      case Op::kSquare: {
        Node& a = nodes_[n.in0];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          a.grad[i] += n.grad[i] * 2.0 * a.data[i];
        break;
      }
      case Op::kNeg: {
        accumulate(n.in0, n.grad, -1.0);
        break;
      }
      case Op::kSum: {
        Node& a = nodes_[n.in0];
        for (double& g : a.grad) g += n.grad[0];
        break;
      }
      case Op::kMean: {
        Node& a = nodes_[n.in0];
        const double g = n.grad[0] / static_cast<double>(a.data.size());
        for (double& ag : a.grad) ag += g;
        break;
      }
      case Op::kConcat: {
        Node& a = nodes_[n.in0];
        Node& b = nodes_[n.in1];
        if (n.shape.size() == 1) {
          for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += n.grad[i];
          for (std::size_t i = 0; i < b.grad.size(); ++i) b.grad[i] += n.grad[a.grad.size() + i];
        } else {
          const int rows = n.shape[0], ca = a.shape[1], cb = b.shape[1];
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < ca; ++c) a.grad[r * ca + c] += n.grad[r * (ca + cb) + c];
            for (int c = 0; c < cb; ++c) b.grad[r * cb + c] += n.grad[r * (ca + cb) + ca + c];
          }
        }
        break;
      }
      case Op::kSoftmax: {
        Node& a = nodes_[n.in0];
        const int cols = n.shape.back();
        const int rows = static_cast<int>(n.data.size()) / cols;
        for (int r = 0; r < rows; ++r) {
          const double* y = &n.data[static_cast<std::size_t>(r) * cols];
          const double* g = &n.grad[static_cast<std::size_t>(r) * cols];
          double dot = 0.0;
          for (int c = 0; c < cols; ++c) dot += g[c] * y[c];
          for (int c = 0; c < cols; ++c)
            a.grad[static_cast<std::size_t>(r) * cols + c] += y[c] * (g[c] - dot);
        }
        break;
      }
      case Op::kLogSoftmax: {
        Node& a = nodes_[n.in0];
        const int cols = n.shape.back();
        const int rows = static_cast<int>(n.data.size()) / cols;
        for (int r = 0; r < rows; ++r) {
          const double* y = &n.data[static_cast<std::size_t>(r) * cols];
          const double* g = &n.grad[static_cast<std::size_t>(r) * cols];
          double gsum = 0.0;
          for (int c = 0; c < cols; ++c) gsum += g[c];
          for (int c = 0; c < cols; ++c)
            a.grad[static_cast<std::size_t>(r) * cols + c] += g[c] - std::exp(y[c]) * gsum;
        }
        break;
      }
      case Op::kGather: {
        Node& a = nodes_[n.in0];
        const int cols = a.shape[1];
        for (std::size_t r = 0; r < n.indices.size(); ++r)
          a.grad[r * cols + n.indices[r]] += n.grad[r];
        break;
      }
      case Op::kClip: {
        Node& a = nodes_[n.in0];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          if (a.data[i] > n.lo && a.data[i] < n.hi) a.grad[i] += n.grad[i];
        break;
      }
      case Op::kMin: {
        Node& a = nodes_[n.in0];
        Node& b = nodes_[n.in1];
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          if (a.data[i] <= b.data[i])
            a.grad[i] += n.grad[i];
          else
            b.grad[i] += n.grad[i];
        }
        break;
      }
      case Op::kBroadcastScalar: {
        Node& a = nodes_[n.in0];
        double acc = 0.0;
        for (double g : n.grad) acc += g;
        a.grad[0] += acc;
        break;
      }
    }
  }

  void accumulate(int id, const std::vector<double>& g, double sign) {
    Node& a = nodes_[id];
    for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += sign * g[i];
  }
};

}  // namespace noisymarl::autodiff
