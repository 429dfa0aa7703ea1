#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "causpref/errors.hpp"
#include "causpref/matrix.hpp"

namespace causpref {

// Reverse-mode engine over dense matrices. Nodes are appended in topological
// order and values are computed eagerly, so backward() is a single reverse
// sweep over the node vector. A tape instance is single-threaded; distinct
// tapes share no mutable state.

enum class OpKind {
  kInput,
  kMatmul,
  kAdd,
  kHadamard,
  kRelu,
  kSigmoid,
  kRowL2Norms,
  kL1Sum,
  kFrobeniusSq,
  kTraceExpmHsq,
  kLog,
  kScalarSum,
  kScale,
  kConcatCols,
  kSliceCols,
  kTranspose,
};

using NodeId = std::int32_t;

struct TapeNode {
  OpKind op;
  std::vector<NodeId> parents;
  Matrix value;
  Matrix adjoint;  // filled by backward()
  double factor = 0.0;  // kScale
  std::size_t col_begin = 0, col_end = 0;  // kSliceCols
  Matrix aux;  // kTraceExpmHsq caches expm(A .* A) for the gradient
  bool needs_grad = true;
};

namespace detail {
inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace detail

class Tape {
 public:
  NodeId input(Matrix value, bool needs_grad = true) {
    TapeNode n;
    n.op = OpKind::kInput;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    TapeNode n;
    n.op = OpKind::kMatmul;
    n.parents = {a, b};
    n.value = causpref::matmul(va, vb);
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) {
    TapeNode n;
    n.op = OpKind::kAdd;
    n.parents = {a, b};
    n.value = causpref::add(value(a), value(b));
    return push(std::move(n));
  }

  NodeId hadamard(NodeId a, NodeId b) {
    TapeNode n;
    n.op = OpKind::kHadamard;
    n.parents = {a, b};
    n.value = causpref::hadamard(value(a), value(b));
    return push(std::move(n));
  }

  NodeId relu(NodeId a) {
    TapeNode n;
    n.op = OpKind::kRelu;
    n.parents = {a};
    n.value = value(a);
    for (double& x : n.value.values()) {
      if (x < 0.0) x = 0.0;
    }
    return push(std::move(n));
  }

  NodeId sigmoid(NodeId a) {
    TapeNode n;
    n.op = OpKind::kSigmoid;
    n.parents = {a};
    n.value = value(a);
    for (double& x : n.value.values()) x = detail::stable_sigmoid(x);
    return push(std::move(n));
  }

  // Column vector of per-row L2 norms.
  NodeId row_l2_norms(NodeId a) {
    const Matrix& va = value(a);
    TapeNode n;
    n.op = OpKind::kRowL2Norms;
    n.parents = {a};
    n.value = Matrix(va.rows(), 1);
    for (std::size_t i = 0; i < va.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < va.cols(); ++j) s += va(i, j) * va(i, j);
      n.value(i, 0) = std::sqrt(s);
    }
    return push(std::move(n));
  }

  NodeId l1_sum(NodeId a) {
    double s = 0.0;
    for (double x : value(a).values()) s += std::fabs(x);
    TapeNode n;
    n.op = OpKind::kL1Sum;
    n.parents = {a};
    n.value = Matrix::scalar(s);
    return push(std::move(n));
  }

  NodeId frobenius_sq(NodeId a) {
    double s = 0.0;
    for (double x : value(a).values()) s += x * x;
    TapeNode n;
    n.op = OpKind::kFrobeniusSq;
    n.parents = {a};
    n.value = Matrix::scalar(s);
    return push(std::move(n));
  }

  // tr(exp(A .* A)) for square A; the exponential itself is cached so the
  // registered gradient exp(A.*A)^T .* 2A comes free in backward().
  NodeId trace_expm_hsq(NodeId a) {
    const Matrix& va = value(a);
    if (va.rows() != va.cols()) {
      throw ShapeError("trace_expm_hsq: matrix must be square, got " +
                       va.shape_str());
    }
    TapeNode n;
    n.op = OpKind::kTraceExpmHsq;
    n.parents = {a};
    n.aux = expm(causpref::hadamard(va, va));
    n.value = Matrix::scalar(trace(n.aux));
    return push(std::move(n));
  }

  NodeId log(NodeId a) {
    TapeNode n;
    n.op = OpKind::kLog;
    n.parents = {a};
    n.value = value(a);
    for (double& x : n.value.values()) {
      if (!(x > 0.0)) {
        throw NumericError("log: argument must be positive, got " +
                           std::to_string(x));
      }
      x = std::log(x);
    }
    return push(std::move(n));
  }

  NodeId scalar_sum(NodeId a) {
    double s = 0.0;
    for (double x : value(a).values()) s += x;
    TapeNode n;
    n.op = OpKind::kScalarSum;
    n.parents = {a};
    n.value = Matrix::scalar(s);
    return push(std::move(n));
  }

  NodeId scale(NodeId a, double factor) {
    TapeNode n;
    n.op = OpKind::kScale;
    n.parents = {a};
    n.factor = factor;
    n.value = causpref::scale(value(a), factor);
    return push(std::move(n));
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (NodeId p : parts) {
      if (value(p).rows() != rows) {
        throw ShapeError("concat_cols: shape mismatch " +
                         value(parts[0]).shape_str() + " vs " +
                         value(p).shape_str());
      }
      cols += value(p).cols();
    }
    TapeNode n;
    n.op = OpKind::kConcatCols;
    n.parents = parts;
    n.value = Matrix(rows, cols);
    std::size_t off = 0;
    for (NodeId p : parts) {
      const Matrix& vp = value(p);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < vp.cols(); ++j) {
          n.value(i, off + j) = vp(i, j);
        }
      }
      off += vp.cols();
    }
    return push(std::move(n));
  }

  NodeId slice_cols(NodeId a, std::size_t begin, std::size_t end) {
    const Matrix& va = value(a);
    if (begin >= end || end > va.cols()) {
      throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                       std::to_string(end) + ") invalid for " + va.shape_str());
    }
    TapeNode n;
    n.op = OpKind::kSliceCols;
    n.parents = {a};
    n.col_begin = begin;
    n.col_end = end;
    n.value = Matrix(va.rows(), end - begin);
    for (std::size_t i = 0; i < va.rows(); ++i) {
      for (std::size_t j = begin; j < end; ++j) {
        n.value(i, j - begin) = va(i, j);
      }
    }
    return push(std::move(n));
  }

  NodeId transpose(NodeId a) {
    TapeNode n;
    n.op = OpKind::kTranspose;
    n.parents = {a};
    n.value = causpref::transpose(value(a));
    return push(std::move(n));
  }

  const Matrix& value(NodeId id) const { return nodes_[check(id)].value; }
  const Matrix& adjoint(NodeId id) const { return nodes_[check(id)].adjoint; }
  std::size_t size() const { return nodes_.size(); }

  // Values are computed eagerly at node creation; forward() just hands back
  // the cached root value.
  const Matrix& forward(NodeId root) const { return value(root); }

  void backward(NodeId root) {
    const std::size_t r = check(root);
    if (nodes_[r].value.rows() != 1 || nodes_[r].value.cols() != 1) {
      throw ShapeError("backward: root must be 1x1, got " +
                       nodes_[r].value.shape_str());
    }
    for (TapeNode& n : nodes_) {
      n.adjoint = Matrix(n.value.rows(), n.value.cols());
    }
    nodes_[r].adjoint(0, 0) = 1.0;
    // Creation order is topological, so the reverse sweep visits every node
    // after all of its consumers.
    for (std::size_t i = r + 1; i-- > 0;) {
      propagate(nodes_[i]);
    }
  }

 private:
  std::vector<TapeNode> nodes_;

  std::size_t check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw Error("tape: invalid node id " + std::to_string(id));
    }
    return static_cast<std::size_t>(id);
  }

  NodeId push(TapeNode n) {
    if (n.op != OpKind::kInput) {
      bool g = false;
      for (NodeId p : n.parents) g = g || nodes_[check(p)].needs_grad;
      n.needs_grad = g;
    }
    if (!n.value.all_finite()) {
      throw NumericError("tape: non-finite value produced by op " +
                         std::to_string(static_cast<int>(n.op)));
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void propagate(TapeNode& n) {
    if (n.op == OpKind::kInput || !n.needs_grad) return;
    const Matrix& g = n.adjoint;
    switch (n.op) {
      case OpKind::kMatmul: {
        TapeNode& a = nodes_[n.parents[0]];
        TapeNode& b = nodes_[n.parents[1]];
        if (a.needs_grad) accumulate(a, causpref::matmul(g, causpref::transpose(b.value)));
        if (b.needs_grad) accumulate(b, causpref::matmul(causpref::transpose(a.value), g));
        break;
      }
      case OpKind::kAdd: {
        for (int s = 0; s < 2; ++s) {
          TapeNode& p = nodes_[n.parents[s]];
          if (p.needs_grad) accumulate(p, g);
        }
        break;
      }
      case OpKind::kHadamard: {
        TapeNode& a = nodes_[n.parents[0]];
        TapeNode& b = nodes_[n.parents[1]];
        if (a.needs_grad) accumulate(a, causpref::hadamard(g, b.value));
        if (b.needs_grad) accumulate(b, causpref::hadamard(g, a.value));
        break;
      }
      case OpKind::kRelu: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        Matrix d = g;
        // Subgradient at exactly zero is zero.
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (a.value.values()[i] <= 0.0) d.values()[i] = 0.0;
        }
        accumulate(a, d);
        break;
      }
      case OpKind::kSigmoid: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        Matrix d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double s = n.value.values()[i];
          d.values()[i] *= s * (1.0 - s);
        }
        accumulate(a, d);
        break;
      }
      case OpKind::kRowL2Norms: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        Matrix d(a.value.rows(), a.value.cols());
        for (std::size_t i = 0; i < d.rows(); ++i) {
          const double nrm = n.value(i, 0);
          if (nrm == 0.0) continue;  // subgradient pinned at zero
          const double gi = g(i, 0) / nrm;
          for (std::size_t j = 0; j < d.cols(); ++j) {
            d(i, j) = gi * a.value(i, j);
          }
        }
        accumulate(a, d);
        break;
      }
      case OpKind::kL1Sum: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        Matrix d(a.value.rows(), a.value.cols());
        const double gs = g(0, 0);
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double x = a.value.values()[i];
          d.values()[i] = x > 0.0 ? gs : (x < 0.0 ? -gs : 0.0);
        }
        accumulate(a, d);
        break;
      }
      case OpKind::kFrobeniusSq: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        accumulate(a, causpref::scale(a.value, 2.0 * g(0, 0)));
        break;
      }
      case OpKind::kTraceExpmHsq: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        // d tr(e^{A.*A}) / dA = (e^{A.*A})^T .* 2A
        Matrix d = causpref::hadamard(causpref::transpose(n.aux),
                                      causpref::scale(a.value, 2.0));
        accumulate(a, causpref::scale(d, g(0, 0)));
        break;
      }
      case OpKind::kLog: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        Matrix d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
          d.values()[i] /= a.value.values()[i];
        }
        accumulate(a, d);
        break;
      }
      case OpKind::kScalarSum: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        accumulate(a, Matrix(a.value.rows(), a.value.cols(), g(0, 0)));
        break;
      }
      case OpKind::kScale: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        accumulate(a, causpref::scale(g, n.factor));
        break;
      }
      case OpKind::kConcatCols: {
        std::size_t off = 0;
        for (NodeId pid : n.parents) {
          TapeNode& p = nodes_[pid];
          if (p.needs_grad) {
            Matrix d(p.value.rows(), p.value.cols());
            for (std::size_t i = 0; i < d.rows(); ++i) {
              for (std::size_t j = 0; j < d.cols(); ++j) {
                d(i, j) = g(i, off + j);
              }
            }
            accumulate(p, d);
          }
          off += p.value.cols();
        }
        break;
      }
      case OpKind::kSliceCols: {
        TapeNode& a = nodes_[n.parents[0]];
        if (!a.needs_grad) break;
        Matrix d(a.value.rows(), a.value.cols());
        for (std::size_t i = 0; i < d.rows(); ++i) {
          for (std::size_t j = n.col_begin; j < n.col_end; ++j) {
            d(i, j) = g(i, j - n.col_begin);
          }
        }
        accumulate(a, d);
        break;
      }
      case OpKind::kTranspose: {
        TapeNode& a = nodes_[n.parents[0]];
        if (a.needs_grad) accumulate(a, causpref::transpose(g));
        break;
      }
      case OpKind::kInput:
        break;
    }
  }

  static void accumulate(TapeNode& p, const Matrix& d) {
    for (std::size_t i = 0; i < p.adjoint.size(); ++i) {
      p.adjoint.values()[i] += d.values()[i];
    }
  }
};

}  // namespace causpref
