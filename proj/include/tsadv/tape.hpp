#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/ndarray.hpp"

namespace tsadv {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kSquare,
  kSqrt,
  kExp,
  kLog,
  kAbs,
  kRelu,
  kMaxConst,
  kClamp,
  kAddConst,
  kMulConst,
  kSum,
  kMean,
  kMatmul,
  kConv1d,
  kConcat,
  kSoftmaxXent,
  kCwMargin,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kSquare: return "square";
    case Op::kSqrt: return "sqrt";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kAbs: return "abs";
    case Op::kRelu: return "relu";
    case Op::kMaxConst: return "max_const";
    case Op::kClamp: return "clamp";
    case Op::kAddConst: return "add_const";
    case Op::kMulConst: return "mul_const";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kMatmul: return "matmul";
    case Op::kConv1d: return "conv1d";
    case Op::kConcat: return "concat";
    case Op::kSoftmaxXent: return "softmax_cross_entropy";
    case Op::kCwMargin: return "cw_margin";
  }
  return "?";
}

/// Reverse-mode differentiation tape. Nodes are appended in evaluation
/// order, so parents always precede children and a single reverse sweep
/// is a valid topological order.
///
/// Elementwise binary ops broadcast a length-1 operand against any shape;
/// anything beyond scalar-with-array is rejected. Every op checks its
/// result for non-finite values and throws NumericError instead of
/// letting them propagate.
class Tape {
 public:
  using NodeId = std::uint32_t;
  static constexpr NodeId kNone = 0xffffffffu;

  struct Node {
    Op op = Op::kLeaf;
    NodeId a = kNone;
    NodeId b = kNone;
    double c0 = 0.0;  // op constant: scalar operand, clamp lo, kappa
    double c1 = 0.0;  // clamp hi
    int label = -1;   // class index for the fused losses
    NdArray value;
    NdArray adjoint;  // empty until backward reaches the node
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// When recording is off, ops still compute values through the same
  /// kernels but register detached constants, so no graph is built.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  std::size_t size() const { return nodes_.size(); }
  const NdArray& value(NodeId id) const { return nodes_.at(id).value; }

  NodeId leaf(NdArray v) {
    if (!v.all_finite()) throw NumericError("leaf: non-finite input value");
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(v);
    return push(std::move(n), /*check_finite=*/false);
  }

  NodeId scalar(double v) { return leaf(NdArray::scalar(v)); }

  NodeId add(NodeId a, NodeId b) {
    return binary(Op::kAdd, a, b, [](double x, double y) { return x + y; });
  }
  NodeId sub(NodeId a, NodeId b) {
    return binary(Op::kSub, a, b, [](double x, double y) { return x - y; });
  }
  NodeId mul(NodeId a, NodeId b) {
    return binary(Op::kMul, a, b, [](double x, double y) { return x * y; });
  }
  NodeId div(NodeId a, NodeId b) {
    for (double y : value(b).data)
      if (y == 0.0) throw NumericError("div: division by zero");
    return binary(Op::kDiv, a, b, [](double x, double y) { return x / y; });
  }

  NodeId neg(NodeId a) {
    return unary(Op::kNeg, a, [](double x) { return -x; });
  }
  NodeId square(NodeId a) {
    return unary(Op::kSquare, a, [](double x) { return x * x; });
  }
  NodeId sqrt(NodeId a) {
    for (double x : value(a).data)
      if (x < 0.0) throw NumericError("sqrt: negative operand");
    return unary(Op::kSqrt, a, [](double x) { return std::sqrt(x); });
  }
  NodeId exp(NodeId a) {
    return unary(Op::kExp, a, [](double x) { return std::exp(x); });
  }
  NodeId log(NodeId a) {
    for (double x : value(a).data)
      if (x <= 0.0) throw NumericError("log: non-positive operand");
    return unary(Op::kLog, a, [](double x) { return std::log(x); });
  }
  NodeId abs(NodeId a) {
    return unary(Op::kAbs, a, [](double x) { return std::fabs(x); });
  }
  NodeId relu(NodeId a) {
    return unary(Op::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; });
  }
  NodeId max_const(NodeId a, double c) {
    Node n = unary_node(Op::kMaxConst, a, [c](double x) { return x > c ? x : c; });
    n.c0 = c;
    return push(std::move(n));
  }
  NodeId clamp(NodeId a, double lo, double hi) {
    if (!(lo <= hi)) throw ConfigError("clamp: lo must be <= hi");
    Node n = unary_node(Op::kClamp, a, [lo, hi](double x) {
      return x < lo ? lo : (x > hi ? hi : x);
    });
    n.c0 = lo;
    n.c1 = hi;
    return push(std::move(n));
  }
  NodeId add_const(NodeId a, double c) {
    Node n = unary_node(Op::kAddConst, a, [c](double x) { return x + c; });
    n.c0 = c;
    return push(std::move(n));
  }
  NodeId mul_const(NodeId a, double c) {
    Node n = unary_node(Op::kMulConst, a, [c](double x) { return x * c; });
    n.c0 = c;
    return push(std::move(n));
  }

  /// Full reduction, fixed left-to-right order.
  NodeId sum(NodeId a) {
    double s = 0.0;
    for (double x : value(a).data) s += x;
    Node n;
    n.op = Op::kSum;
    n.a = a;
    n.value = NdArray::scalar(s);
    return push(std::move(n));
  }

  NodeId mean(NodeId a) {
    const NdArray& va = value(a);
    if (va.numel() == 0) throw ShapeError("mean: empty operand");
    double s = 0.0;
    for (double x : va.data) s += x;
    Node n;
    n.op = Op::kMean;
    n.a = a;
    n.value = NdArray::scalar(s / static_cast<double>(va.numel()));
    return push(std::move(n));
  }

  /// (m,n)x(n,p) -> (m,p), or (m,n)x(n) -> (m).
  NodeId matmul(NodeId a, NodeId b) {
    const NdArray& A = value(a);
    const NdArray& B = value(b);
    if (A.rank() != 2)
      throw ShapeError("matmul: left operand must be rank 2, got " + shape_string(A));
    std::size_t m = A.rows(), n = A.cols();
    Node node;
    node.op = Op::kMatmul;
    node.a = a;
    node.b = b;
    if (B.rank() == 1) {
      if (B.numel() != n)
        throw ShapeError("matmul: inner dimensions differ: " + shape_string(A) +
                         " vs " + shape_string(B));
      NdArray out = NdArray::zeros({m});
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += A.at(i, k) * B[k];
        out[i] = s;
      }
      node.value = std::move(out);
    } else if (B.rank() == 2) {
      if (B.rows() != n)
        throw ShapeError("matmul: inner dimensions differ: " + shape_string(A) +
                         " vs " + shape_string(B));
      std::size_t p = B.cols();
      NdArray out = NdArray::zeros({m, p});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < n; ++k) s += A.at(i, k) * B.at(k, j);
          out.at(i, j) = s;
        }
      node.value = std::move(out);
    } else {
      throw ShapeError("matmul: right operand must be rank 1 or 2");
    }
    return push(std::move(node));
  }

  /// Valid-mode correlation, stride 1: out[i] = sum_j s[i+j] * k[j].
  NodeId conv1d(NodeId signal, NodeId kernel) {
    const NdArray& s = value(signal);
    const NdArray& k = value(kernel);
    if (s.rank() != 1 || k.rank() != 1)
      throw ShapeError("conv1d: operands must be rank 1");
    if (k.numel() == 0 || k.numel() > s.numel())
      throw ShapeError("conv1d: kernel length must be in [1, signal length]");
    std::size_t out_len = s.numel() - k.numel() + 1;
    NdArray out = NdArray::zeros({out_len});
    for (std::size_t i = 0; i < out_len; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k.numel(); ++j) acc += s[i + j] * k[j];
      out[i] = acc;
    }
    Node n;
    n.op = Op::kConv1d;
    n.a = signal;
    n.b = kernel;
    n.value = std::move(out);
    return push(std::move(n));
  }

  /// Concatenation of two rank-1 arrays (scalars count as length 1).
  NodeId concat(NodeId a, NodeId b) {
    const NdArray& va = value(a);
    const NdArray& vb = value(b);
    if (va.rank() != 1 || vb.rank() != 1)
      throw ShapeError("concat: operands must be rank 1");
    std::vector<double> out = va.data;
    out.insert(out.end(), vb.data.begin(), vb.data.end());
    Node n;
    n.op = Op::kConcat;
    n.a = a;
    n.b = b;
    n.value = NdArray::vec(std::move(out));
    return push(std::move(n));
  }

  /// Fused, numerically stable softmax + cross-entropy:
  /// value = logsumexp(z) - z[label].
  NodeId softmax_cross_entropy(NodeId logits, int label) {
    const NdArray& z = value(logits);
    if (z.rank() != 1 || z.numel() < 1)
      throw ShapeError("softmax_cross_entropy: logits must be a non-empty vector");
    if (label < 0 || static_cast<std::size_t>(label) >= z.numel())
      throw ConfigError("softmax_cross_entropy: label out of range");
    double m = z[0];
    for (double v : z.data) m = std::max(m, v);
    double lse = 0.0;
    for (double v : z.data) lse += std::exp(v - m);
    lse = m + std::log(lse);
    Node n;
    n.op = Op::kSoftmaxXent;
    n.a = logits;
    n.label = label;
    n.value = NdArray::scalar(lse - z[static_cast<std::size_t>(label)]);
    return push(std::move(n));
  }

  /// Untargeted margin loss: max(z[y] - max_{j != y} z[j], -kappa).
  /// The runner-up argmax breaks ties toward the lowest index; at the
  /// kink the derivative is zero.
  NodeId cw_margin(NodeId logits, int label, double kappa) {
    const NdArray& z = value(logits);
    if (z.rank() != 1 || z.numel() < 2)
      throw ShapeError("cw_margin: logits must have length >= 2");
    if (label < 0 || static_cast<std::size_t>(label) >= z.numel())
      throw ConfigError("cw_margin: label out of range");
    if (kappa < 0.0) throw ConfigError("cw_margin: kappa must be >= 0");
    std::size_t runner = runner_up(z, label);
    double margin = z[static_cast<std::size_t>(label)] - z[runner];
    Node n;
    n.op = Op::kCwMargin;
    n.a = logits;
    n.label = label;
    n.c0 = kappa;
    n.value = NdArray::scalar(margin > -kappa ? margin : -kappa);
    return push(std::move(n));
  }

  /// Propagates d(root)/d(node) into every node reachable from the
  /// scalar root. A second call without reset() is an error.
  void backward(NodeId root) {
    if (backward_done_)
      throw Error("backward: already run on this tape; call reset() first");
    const NdArray& rv = value(root);
    if (rv.numel() != 1)
      throw ShapeError("backward: root must be scalar, got " + shape_string(rv));
    backward_done_ = true;
    ensure_adjoint(root)[0] = 1.0;
    for (NodeId id = root + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.adjoint.numel() == 0) continue;  // unreachable from root
      propagate(n);
    }
  }

  void reset() {
    for (Node& n : nodes_) n.adjoint = NdArray();
    backward_done_ = false;
  }

  /// Adjoint of a node after backward(); zeros if the node was not
  /// reached (its derivative is zero).
  NdArray grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (n.adjoint.numel() == 0) return NdArray::zeros(n.value.shape);
    return n.adjoint;
  }

 private:
  std::vector<Node> nodes_;
  bool recording_ = true;
  bool backward_done_ = false;

  NodeId push(Node n, bool check_finite = true) {
    if (check_finite && !n.value.all_finite())
      throw NumericError(std::string("non-finite result in ") + op_name(n.op));
    if (!recording_ && n.op != Op::kLeaf) {
      // detach: keep the value, drop the graph edges
      n.op = Op::kLeaf;
      n.a = kNone;
      n.b = kNone;
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  template <class F>
  Node unary_node(Op op, NodeId a, F f) const {
    const NdArray& va = value(a);
    NdArray out = NdArray::zeros(va.shape);
    for (std::size_t i = 0; i < va.numel(); ++i) out[i] = f(va[i]);
    Node n;
    n.op = op;
    n.a = a;
    n.value = std::move(out);
    return n;
  }

  template <class F>
  NodeId unary(Op op, NodeId a, F f) {
    return push(unary_node(op, a, f));
  }

  template <class F>
  NodeId binary(Op op, NodeId a, NodeId b, F f) {
    const NdArray& va = value(a);
    const NdArray& vb = value(b);
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    if (va.same_shape(vb)) {
      NdArray out = NdArray::zeros(va.shape);
      for (std::size_t i = 0; i < va.numel(); ++i) out[i] = f(va[i], vb[i]);
      n.value = std::move(out);
    } else if (va.is_scalar()) {
      NdArray out = NdArray::zeros(vb.shape);
      for (std::size_t i = 0; i < vb.numel(); ++i) out[i] = f(va[0], vb[i]);
      n.value = std::move(out);
    } else if (vb.is_scalar()) {
      NdArray out = NdArray::zeros(va.shape);
      for (std::size_t i = 0; i < va.numel(); ++i) out[i] = f(va[i], vb[0]);
      n.value = std::move(out);
    } else {
      throw ShapeError(std::string(op_name(op)) + ": shape mismatch " +
                       shape_string(va) + " vs " + shape_string(vb));
    }
    return push(std::move(n));
  }

  NdArray& ensure_adjoint(NodeId id) {
    Node& n = nodes_[id];
    if (n.adjoint.numel() == 0) n.adjoint = NdArray::zeros(n.value.shape);
    return n.adjoint;
  }

  static std::size_t runner_up(const NdArray& z, int label) {
    std::size_t best = label == 0 ? 1 : 0;
    for (std::size_t j = 0; j < z.numel(); ++j) {
      if (j == static_cast<std::size_t>(label)) continue;
      if (z[j] > z[best]) best = j;
    }
    return best;
  }

  /// Accumulates g[i] * partial(i) into x's adjoint, folding the sum when
  /// x was a broadcast scalar.
  template <class P>
  void accum_ew(NodeId x, const NdArray& g, P partial) {
    NdArray& adj = ensure_adjoint(x);
    if (adj.numel() == 1 && g.numel() > 1) {
      double s = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) s += g[i] * partial(i);
      adj[0] += s;
    } else {
      for (std::size_t i = 0; i < g.numel(); ++i) adj[i] += g[i] * partial(i);
    }
  }

  // Reads operand value element honoring scalar broadcast.
  static double pick(const NdArray& v, std::size_t i) {
    return v.numel() == 1 ? v[0] : v[i];
  }

  void propagate(Node& n) {
    const NdArray& g = n.adjoint;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        accum_ew(n.a, g, [](std::size_t) { return 1.0; });
        accum_ew(n.b, g, [](std::size_t) { return 1.0; });
        break;
      }
      case Op::kSub: {
        accum_ew(n.a, g, [](std::size_t) { return 1.0; });
        accum_ew(n.b, g, [](std::size_t) { return -1.0; });
        break;
      }
      case Op::kMul: {
        const NdArray& va = nodes_[n.a].value;
        const NdArray& vb = nodes_[n.b].value;
        accum_ew(n.a, g, [&](std::size_t i) { return pick(vb, i); });
        accum_ew(n.b, g, [&](std::size_t i) { return pick(va, i); });
        break;
      }
      case Op::kDiv: {
        const NdArray& va = nodes_[n.a].value;
        const NdArray& vb = nodes_[n.b].value;
        accum_ew(n.a, g, [&](std::size_t i) { return 1.0 / pick(vb, i); });
        accum_ew(n.b, g, [&](std::size_t i) {
          double bb = pick(vb, i);
          return -pick(va, i) / (bb * bb);
        });
        break;
      }
      case Op::kNeg:
        accum_ew(n.a, g, [](std::size_t) { return -1.0; });
        break;
      case Op::kSquare: {
        const NdArray& va = nodes_[n.a].value;
        accum_ew(n.a, g, [&](std::size_t i) { return 2.0 * va[i]; });
        break;
      }
      case Op::kSqrt: {
        const NdArray& v = n.value;
        accum_ew(n.a, g, [&](std::size_t i) { return 0.5 / v[i]; });
        break;
      }
      case Op::kExp: {
        const NdArray& v = n.value;
        accum_ew(n.a, g, [&](std::size_t i) { return v[i]; });
        break;
      }
      case Op::kLog: {
        const NdArray& va = nodes_[n.a].value;
        accum_ew(n.a, g, [&](std::size_t i) { return 1.0 / va[i]; });
        break;
      }
      case Op::kAbs: {
        const NdArray& va = nodes_[n.a].value;
        accum_ew(n.a, g, [&](std::size_t i) {
          return va[i] > 0.0 ? 1.0 : (va[i] < 0.0 ? -1.0 : 0.0);
        });
        break;
      }
      case Op::kRelu: {
        const NdArray& va = nodes_[n.a].value;
        accum_ew(n.a, g, [&](std::size_t i) { return va[i] > 0.0 ? 1.0 : 0.0; });
        break;
      }
      case Op::kMaxConst: {
        const NdArray& va = nodes_[n.a].value;
        double c = n.c0;
        accum_ew(n.a, g, [&](std::size_t i) { return va[i] > c ? 1.0 : 0.0; });
        break;
      }
      case Op::kClamp: {
        const NdArray& va = nodes_[n.a].value;
        double lo = n.c0, hi = n.c1;
        accum_ew(n.a, g,
                 [&](std::size_t i) { return (va[i] > lo && va[i] < hi) ? 1.0 : 0.0; });
        break;
      }
      case Op::kAddConst:
        accum_ew(n.a, g, [](std::size_t) { return 1.0; });
        break;
      case Op::kMulConst: {
        double c = n.c0;
        accum_ew(n.a, g, [c](std::size_t) { return c; });
        break;
      }
      case Op::kSum: {
        NdArray& adj = ensure_adjoint(n.a);
        double gv = g[0];
        for (std::size_t i = 0; i < adj.numel(); ++i) adj[i] += gv;
        break;
      }
      case Op::kMean: {
        NdArray& adj = ensure_adjoint(n.a);
        double gv = g[0] / static_cast<double>(adj.numel());
        for (std::size_t i = 0; i < adj.numel(); ++i) adj[i] += gv;
        break;
      }
      case Op::kMatmul: {
        const NdArray& A = nodes_[n.a].value;
        const NdArray& B = nodes_[n.b].value;
        NdArray& dA = ensure_adjoint(n.a);
        NdArray& dB = ensure_adjoint(n.b);
        std::size_t m = A.rows(), k = A.cols();
        if (B.rank() == 1) {
          // out (m) = A (m,k) * b (k)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              dA.at(i, j) += g[i] * B[j];
              dB[j] += g[i] * A.at(i, j);
            }
        } else {
          std::size_t p = B.cols();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p; ++j) {
              double gv = g.at(i, j);
              for (std::size_t t = 0; t < k; ++t) {
                dA.at(i, t) += gv * B.at(t, j);
                dB.at(t, j) += gv * A.at(i, t);
              }
            }
        }
        break;
      }
      case Op::kConv1d: {
        const NdArray& s = nodes_[n.a].value;
        const NdArray& k = nodes_[n.b].value;
        NdArray& ds = ensure_adjoint(n.a);
        NdArray& dk = ensure_adjoint(n.b);
        std::size_t out_len = n.value.numel();
        for (std::size_t i = 0; i < out_len; ++i) {
          double gv = g[i];
          for (std::size_t j = 0; j < k.numel(); ++j) {
            ds[i + j] += gv * k[j];
            dk[j] += gv * s[i + j];
          }
        }
        break;
      }
      case Op::kConcat: {
        NdArray& da = ensure_adjoint(n.a);
        NdArray& db = ensure_adjoint(n.b);
        std::size_t na = da.numel();
        for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
        for (std::size_t i = 0; i < db.numel(); ++i) db[i] += g[na + i];
        break;
      }
      case Op::kSoftmaxXent: {
        const NdArray& z = nodes_[n.a].value;
        NdArray& dz = ensure_adjoint(n.a);
        double m = z[0];
        for (double v : z.data) m = std::max(m, v);
        double denom = 0.0;
        for (double v : z.data) denom += std::exp(v - m);
        double gv = g[0];
        for (std::size_t i = 0; i < z.numel(); ++i) {
          double p = std::exp(z[i] - m) / denom;
          dz[i] += gv * (p - (i == static_cast<std::size_t>(n.label) ? 1.0 : 0.0));
        }
        break;
      }
      case Op::kCwMargin: {
        const NdArray& z = nodes_[n.a].value;
        std::size_t y = static_cast<std::size_t>(n.label);
        std::size_t r = runner_up(z, n.label);
        if (z[y] - z[r] > -n.c0) {
          NdArray& dz = ensure_adjoint(n.a);
          dz[y] += g[0];
          dz[r] -= g[0];
        }
        break;
      }
    }
  }
};

/// Max relative gradient error of a scalar-valued graph against central
/// finite differences, with denominator max(1, |analytic|, |numeric|).
inline double grad_check(const std::function<Tape::NodeId(Tape&, Tape::NodeId)>& f,
                         const NdArray& x, double h = 1e-5) {
  Tape tape;
  Tape::NodeId leaf = tape.leaf(x);
  Tape::NodeId root = f(tape, leaf);
  if (tape.value(root).numel() != 1)
    throw ShapeError("grad_check: f must produce a scalar");
  tape.backward(root);
  NdArray analytic = tape.grad(leaf);

  auto eval = [&](const NdArray& probe) {
    Tape t;
    t.set_recording(false);
    double v = t.value(f(t, t.leaf(probe)))[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite f at probe point");
    return v;
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    NdArray lo = x, hi = x;
    hi[i] += h;
    lo[i] -= h;
    double fd = (eval(hi) - eval(lo)) / (2.0 * h);
    double a = analytic[i];
    double err = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace tsadv
