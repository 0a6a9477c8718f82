#pragma once

// Define-by-run reverse-mode engine over Matrix. Forward values are computed
// eagerly through the kernels in numeric.hpp; backward() walks the node list
// in reverse and accumulates gradients for every node reachable from the
// root that depends on a differentiable leaf.

#include <array>
#include <cassert>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "baformer/numeric.hpp"

namespace baformer {

class Tape {
 public:
  using Var = int;

  Var leaf(const Matrix& value, bool requires_grad) {
    return push(Op::leaf, {}, value, requires_grad);
  }

  Var constant(const Matrix& value) { return leaf(value, false); }

  Var constant_scalar(double v) { return constant(Matrix::full(1, 1, v)); }

  Var matmul(Var a, Var b) {
    return push(Op::matmul, {a, b}, baformer::matmul(val(a), val(b)));
  }

  Var add(Var a, Var b) { return push(Op::add, {a, b}, baformer::add(val(a), val(b))); }
  Var sub(Var a, Var b) { return push(Op::sub, {a, b}, baformer::sub(val(a), val(b))); }

  Var hadamard(Var a, Var b) {
    return push(Op::hadamard, {a, b}, baformer::hadamard(val(a), val(b)));
  }

  Var div(Var a, Var b) {
    const Matrix& x = val(a);
    const Matrix& y = val(b);
    if (!x.same_shape(y)) detail::shape_error("div", x, y);
    Matrix out = x;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] /= y.data[i];
    return push(Op::div, {a, b}, std::move(out));
  }

  // scale * x + shift, elementwise with scalar constants.
  Var affine(Var a, double scale, double shift) {
    Matrix out = val(a);
    for (double& v : out.data) v = scale * v + shift;
    Var r = push(Op::affine, {a}, std::move(out));
    nodes_[r].p0 = scale;
    return r;
  }

  Var scale(Var a, double s) { return affine(a, s, 0.0); }

  Var transpose(Var a) { return push(Op::transpose, {a}, baformer::transpose(val(a))); }

  Var row_softmax(Var a) { return push(Op::row_softmax, {a}, baformer::row_softmax(val(a))); }

  Var sigmoid(Var a) { return push(Op::sigmoid, {a}, baformer::sigmoid(val(a))); }

  Var relu(Var a) { return push(Op::relu, {a}, baformer::relu(val(a))); }

  Var log(Var a) {
    Matrix out = val(a);
    for (double& v : out.data) v = std::log(v);
    return push(Op::log, {a}, std::move(out));
  }

  Var pow_const(Var a, double p) {
    Matrix out = val(a);
    for (double& v : out.data) v = std::pow(v, p);
    Var r = push(Op::pow_const, {a}, std::move(out));
    nodes_[r].p0 = p;
    return r;
  }

  Var clamp(Var a, double lo, double hi) {
    Matrix out = val(a);
    for (double& v : out.data) v = std::min(std::max(v, lo), hi);
    Var r = push(Op::clamp, {a}, std::move(out));
    nodes_[r].p0 = lo;
    nodes_[r].p1 = hi;
    return r;
  }

  Var layer_norm(Var a) { return push(Op::layer_norm, {a}, baformer::layer_norm(val(a))); }

  Var time_shift(Var a, int offset) {
    Var r = push(Op::time_shift, {a}, baformer::time_shift(val(a), offset));
    nodes_[r].i0 = offset;
    return r;
  }

  // x: R x C, v: 1 x C broadcast over rows.
  Var add_rowvec(Var x, Var v) {
    const Matrix& a = val(x);
    const Matrix& b = val(v);
    if (b.rows != 1 || b.cols != a.cols) detail::shape_error("add_rowvec", a, b);
    Matrix out = a;
    for (int i = 0; i < a.rows; ++i)
      for (int j = 0; j < a.cols; ++j) out(i, j) += b(0, j);
    return push(Op::add_rowvec, {x, v}, std::move(out));
  }

  Var mul_rowvec(Var x, Var v) {
    const Matrix& a = val(x);
    const Matrix& b = val(v);
    if (b.rows != 1 || b.cols != a.cols) detail::shape_error("mul_rowvec", a, b);
    Matrix out = a;
    for (int i = 0; i < a.rows; ++i)
      for (int j = 0; j < a.cols; ++j) out(i, j) *= b(0, j);
    return push(Op::mul_rowvec, {x, v}, std::move(out));
  }

  // Rows [r0, r1).
  Var row_slice(Var a, int r0, int r1) {
    const Matrix& x = val(a);
    if (r0 < 0 || r1 > x.rows || r0 >= r1)
      throw std::invalid_argument("row_slice: range [" + std::to_string(r0) + "," +
                                  std::to_string(r1) + ") out of " + x.shape_str());
    Matrix out(r1 - r0, x.cols);
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < x.cols; ++j) out(i - r0, j) = x(i, j);
    Var r = push(Op::row_slice, {a}, std::move(out));
    nodes_[r].i0 = r0;
    nodes_[r].i1 = r1;
    return r;
  }

  // Columns [c0, c1).
  Var col_slice(Var a, int c0, int c1) {
    const Matrix& x = val(a);
    if (c0 < 0 || c1 > x.cols || c0 >= c1)
      throw std::invalid_argument("col_slice: range [" + std::to_string(c0) + "," +
                                  std::to_string(c1) + ") out of " + x.shape_str());
    Matrix out(x.rows, c1 - c0);
    for (int i = 0; i < x.rows; ++i)
      for (int j = c0; j < c1; ++j) out(i, j - c0) = x(i, j);
    Var r = push(Op::col_slice, {a}, std::move(out));
    nodes_[r].i0 = c0;
    nodes_[r].i1 = c1;
    return r;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    int rows = 0;
    const int cols = val(parts[0]).cols;
    for (Var p : parts) {
      if (val(p).cols != cols) detail::shape_error("concat_rows", val(parts[0]), val(p));
      rows += val(p).rows;
    }
    Matrix out(rows, cols);
    int r = 0;
    for (Var p : parts) {
      const Matrix& x = val(p);
      for (int i = 0; i < x.rows; ++i, ++r)
        for (int j = 0; j < cols; ++j) out(r, j) = x(i, j);
    }
    return push(Op::concat_rows, parts, std::move(out));
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    int cols = 0;
    const int rows = val(parts[0]).rows;
    for (Var p : parts) {
      if (val(p).rows != rows) detail::shape_error("concat_cols", val(parts[0]), val(p));
      cols += val(p).cols;
    }
    Matrix out(rows, cols);
    int c = 0;
    for (Var p : parts) {
      const Matrix& x = val(p);
      for (int j = 0; j < x.cols; ++j, ++c)
        for (int i = 0; i < rows; ++i) out(i, c) = x(i, j);
    }
    return push(Op::concat_cols, parts, std::move(out));
  }

  // Sum of all entries, as a 1x1 matrix.
  Var sum_all(Var a) {
    double s = 0.0;
    for (double v : val(a).data) s += v;
    return push(Op::sum_all, {a}, Matrix::full(1, 1, s));
  }

  const Matrix& value(Var v) const { return nodes_[v].value; }

  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.rows != 1 || m.cols != 1)
      throw std::invalid_argument("scalar: node is " + m.shape_str());
    return m(0, 0);
  }

  // Gradient of the last backward() root with respect to node v.
  // Zero matrix if v did not contribute to the root.
  const Matrix& grad(Var v) {
    Matrix& g = grads_[v];
    if (g.data.empty()) g = Matrix::zeros(nodes_[v].value.rows, nodes_[v].value.cols);
    return g;
  }

  void backward(Var root) {
    const Matrix& r = value(root);
    if (r.rows != 1 || r.cols != 1)
      throw std::invalid_argument("backward: root must be 1x1, got " + r.shape_str());
    grads_.assign(nodes_.size(), Matrix());
    grads_[root] = Matrix::full(1, 1, 1.0);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || grads_[i].data.empty()) continue;
      backprop(i, n);
    }
  }

  size_t node_count() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  enum class Op {
    leaf,
    matmul,
    add,
    sub,
    hadamard,
    div,
    affine,
    transpose,
    row_softmax,
    sigmoid,
    relu,
    log,
    pow_const,
    clamp,
    layer_norm,
    time_shift,
    add_rowvec,
    mul_rowvec,
    row_slice,
    col_slice,
    concat_rows,
    concat_cols,
    sum_all,
  };

  struct Node {
    Op op;
    std::vector<Var> in;
    Matrix value;
    bool requires_grad = false;
    int i0 = 0, i1 = 0;
    double p0 = 0.0, p1 = 0.0;
  };

  const Matrix& val(Var v) const { return nodes_[v].value; }

  Var push(Op op, std::vector<Var> in, Matrix value, bool leaf_requires = false) {
    Node n;
    n.op = op;
    n.requires_grad = leaf_requires;
    for (Var v : in) n.requires_grad = n.requires_grad || nodes_[v].requires_grad;
    n.in = std::move(in);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  Matrix& grad_buf(Var v) {
    Matrix& g = grads_[v];
    if (g.data.empty()) g = Matrix::zeros(nodes_[v].value.rows, nodes_[v].value.cols);
    return g;
  }

  // Accumulate into input v only if it (transitively) depends on a leaf.
  bool wants(Var v) const { return nodes_[v].requires_grad; }

  void backprop(int i, Node& n) {
    const Matrix& g = grads_[i];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul: {
        const Matrix& a = val(n.in[0]);
        const Matrix& b = val(n.in[1]);
        if (wants(n.in[0])) acc(grad_buf(n.in[0]), matmul_nt(g, b));
        if (wants(n.in[1])) acc(grad_buf(n.in[1]), matmul_tn(a, g));
        break;
      }
      case Op::add:
        if (wants(n.in[0])) acc(grad_buf(n.in[0]), g);
        if (wants(n.in[1])) acc(grad_buf(n.in[1]), g);
        break;
      case Op::sub:
        if (wants(n.in[0])) acc(grad_buf(n.in[0]), g);
        if (wants(n.in[1])) {
          Matrix& gb = grad_buf(n.in[1]);
          for (size_t k = 0; k < gb.size(); ++k) gb.data[k] -= g.data[k];
        }
        break;
      case Op::hadamard:
        if (wants(n.in[0])) acc(grad_buf(n.in[0]), hadamard(g, val(n.in[1])));
        if (wants(n.in[1])) acc(grad_buf(n.in[1]), hadamard(g, val(n.in[0])));
        break;
      case Op::div: {
        const Matrix& b = val(n.in[1]);
        if (wants(n.in[0])) {
          Matrix da = g;
          for (size_t k = 0; k < da.size(); ++k) da.data[k] /= b.data[k];
          acc(grad_buf(n.in[0]), da);
        }
        if (wants(n.in[1])) {
          Matrix db = g;  // -g * out / b
          for (size_t k = 0; k < db.size(); ++k)
            db.data[k] *= -n.value.data[k] / b.data[k];
          acc(grad_buf(n.in[1]), db);
        }
        break;
      }
      case Op::affine:
        if (wants(n.in[0])) {
          Matrix& gb = grad_buf(n.in[0]);
          for (size_t k = 0; k < gb.size(); ++k) gb.data[k] += n.p0 * g.data[k];
        }
        break;
      case Op::transpose:
        if (wants(n.in[0])) acc(grad_buf(n.in[0]), baformer::transpose(g));
        break;
      case Op::row_softmax: {
        if (!wants(n.in[0])) break;
        const Matrix& y = n.value;
        Matrix dx(y.rows, y.cols);
        for (int r = 0; r < y.rows; ++r) {
          double dot = 0.0;
          for (int c = 0; c < y.cols; ++c) dot += g(r, c) * y(r, c);
          for (int c = 0; c < y.cols; ++c) dx(r, c) = y(r, c) * (g(r, c) - dot);
        }
        acc(grad_buf(n.in[0]), dx);
        break;
      }
      case Op::sigmoid: {
        if (!wants(n.in[0])) break;
        Matrix dx = g;
        for (size_t k = 0; k < dx.size(); ++k) {
          const double y = n.value.data[k];
          dx.data[k] *= y * (1.0 - y);
        }
        acc(grad_buf(n.in[0]), dx);
        break;
      }
      case Op::relu: {
        if (!wants(n.in[0])) break;
        const Matrix& x = val(n.in[0]);
        Matrix dx = g;
        for (size_t k = 0; k < dx.size(); ++k)
          if (x.data[k] <= 0.0) dx.data[k] = 0.0;
        acc(grad_buf(n.in[0]), dx);
        break;
      }
      case Op::log: {
        if (!wants(n.in[0])) break;
        const Matrix& x = val(n.in[0]);
        Matrix dx = g;
        for (size_t k = 0; k < dx.size(); ++k) dx.data[k] /= x.data[k];
        acc(grad_buf(n.in[0]), dx);
        break;
      }
      case Op::pow_const: {
        if (!wants(n.in[0])) break;
        const Matrix& x = val(n.in[0]);
        Matrix dx = g;
        for (size_t k = 0; k < dx.size(); ++k)
          dx.data[k] *= n.p0 * std::pow(x.data[k], n.p0 - 1.0);
        acc(grad_buf(n.in[0]), dx);
        break;
      }
      case Op::clamp: {
        if (!wants(n.in[0])) break;
        const Matrix& x = val(n.in[0]);
        Matrix dx = g;
        for (size_t k = 0; k < dx.size(); ++k)
          if (x.data[k] <= n.p0 || x.data[k] >= n.p1) dx.data[k] = 0.0;
        acc(grad_buf(n.in[0]), dx);
        break;
      }
      case Op::layer_norm: {
        if (!wants(n.in[0])) break;
        const Matrix& x = val(n.in[0]);
        const Matrix& y = n.value;
        Matrix dx(x.rows, x.cols);
        const int c = x.cols;
        for (int r = 0; r < x.rows; ++r) {
          double mean = 0.0;
          for (int j = 0; j < c; ++j) mean += x(r, j);
          mean /= c;
          double var = 0.0;
          for (int j = 0; j < c; ++j) {
            const double d = x(r, j) - mean;
            var += d * d;
          }
          var /= c;
          const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
          double gmean = 0.0, gymean = 0.0;
          for (int j = 0; j < c; ++j) {
            gmean += g(r, j);
            gymean += g(r, j) * y(r, j);
          }
          gmean /= c;
          gymean /= c;
          for (int j = 0; j < c; ++j)
            dx(r, j) = inv * (g(r, j) - gmean - y(r, j) * gymean);
        }
        acc(grad_buf(n.in[0]), dx);
        break;
      }
      case Op::time_shift:
        if (wants(n.in[0])) acc(grad_buf(n.in[0]), baformer::time_shift(g, -n.i0));
        break;
      case Op::add_rowvec: {
        if (wants(n.in[0])) acc(grad_buf(n.in[0]), g);
        if (wants(n.in[1])) {
          Matrix& gv = grad_buf(n.in[1]);
          for (int r = 0; r < g.rows; ++r)
            for (int j = 0; j < g.cols; ++j) gv(0, j) += g(r, j);
        }
        break;
      }
      case Op::mul_rowvec: {
        const Matrix& x = val(n.in[0]);
        const Matrix& v = val(n.in[1]);
        if (wants(n.in[0])) {
          Matrix dx = g;
          for (int r = 0; r < g.rows; ++r)
            for (int j = 0; j < g.cols; ++j) dx(r, j) *= v(0, j);
          acc(grad_buf(n.in[0]), dx);
        }
        if (wants(n.in[1])) {
          Matrix& gv = grad_buf(n.in[1]);
          for (int r = 0; r < g.rows; ++r)
            for (int j = 0; j < g.cols; ++j) gv(0, j) += g(r, j) * x(r, j);
        }
        break;
      }
      case Op::row_slice: {
        if (!wants(n.in[0])) break;
        Matrix& gx = grad_buf(n.in[0]);
        for (int r = n.i0; r < n.i1; ++r)
          for (int j = 0; j < g.cols; ++j) gx(r, j) += g(r - n.i0, j);
        break;
      }
      case Op::col_slice: {
        if (!wants(n.in[0])) break;
        Matrix& gx = grad_buf(n.in[0]);
        for (int r = 0; r < g.rows; ++r)
          for (int j = n.i0; j < n.i1; ++j) gx(r, j) += g(r, j - n.i0);
        break;
      }
      case Op::concat_rows: {
        int r = 0;
        for (Var p : n.in) {
          const int pr = val(p).rows;
          if (wants(p)) {
            Matrix& gp = grad_buf(p);
            for (int i2 = 0; i2 < pr; ++i2)
              for (int j = 0; j < g.cols; ++j) gp(i2, j) += g(r + i2, j);
          }
          r += pr;
        }
        break;
      }
      case Op::concat_cols: {
        int c = 0;
        for (Var p : n.in) {
          const int pc = val(p).cols;
          if (wants(p)) {
            Matrix& gp = grad_buf(p);
            for (int i2 = 0; i2 < g.rows; ++i2)
              for (int j = 0; j < pc; ++j) gp(i2, j) += g(i2, c + j);
          }
          c += pc;
        }
        break;
      }
      case Op::sum_all: {
        if (!wants(n.in[0])) break;
        Matrix& gx = grad_buf(n.in[0]);
        const double s = g(0, 0);
        for (double& v : gx.data) v += s;
        break;
      }
    }
  }

  static void acc(Matrix& dst, const Matrix& src) {
    for (size_t k = 0; k < dst.size(); ++k) dst.data[k] += src.data[k];
  }

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
};

}  // namespace baformer
