#pragma once

// Dense double-precision matrix type and the forward kernels everything else
// is built from. All kernels are pure and deterministic; shape violations
// throw std::invalid_argument with the kernel name and the offending dims.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace baformer {

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(check_dims(r, c), 0.0) {}
  Matrix(int r, int c, double fill) : rows(r), cols(c), data(check_dims(r, c), fill) {}

  static Matrix zeros(int r, int c) { return Matrix(r, c); }
  static Matrix full(int r, int c, double v) { return Matrix(r, c, v); }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows_init) {
    const int r = static_cast<int>(rows_init.size());
    const int c = r > 0 ? static_cast<int>(rows_init.begin()->size()) : 0;
    Matrix m(r, c);
    int i = 0;
    for (const auto& row : rows_init) {
      if (static_cast<int>(row.size()) != c)
        throw std::invalid_argument("Matrix::from_rows: ragged initializer");
      int j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  static Matrix row_vector(const std::vector<double>& v) {
    Matrix m(1, static_cast<int>(v.size()));
    m.data = v;
    return m;
  }

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }

 private:
  static size_t check_dims(int r, int c) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
    return static_cast<size_t>(r) * static_cast<size_t>(c);
  }
};

namespace detail {

[[noreturn]] inline void shape_error(const char* kind, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(std::string(kind) + ": shape mismatch (" + a.shape_str() +
                              " vs " + b.shape_str() + ")");
}

[[noreturn]] inline void shape_error(const char* kind, const Matrix& a) {
  throw std::invalid_argument(std::string(kind) + ": bad shape (" + a.shape_str() + ")");
}

}  // namespace detail

// out = a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) detail::shape_error("matmul", a, b);
  Matrix out(a.rows, b.cols);
  const int n = a.rows, k = a.cols, m = b.cols;
  for (int i = 0; i < n; ++i) {
    const double* ar = &a.data[static_cast<size_t>(i) * k];
    double* orow = &out.data[static_cast<size_t>(i) * m];
    for (int p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = &b.data[static_cast<size_t>(p) * m];
      for (int j = 0; j < m; ++j) orow[j] += av * br[j];
    }
  }
  return out;
}

// out = a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) detail::shape_error("matmul_nt", a, b);
  Matrix out(a.rows, b.rows);
  const int n = a.rows, k = a.cols, m = b.rows;
  for (int i = 0; i < n; ++i) {
    const double* ar = &a.data[static_cast<size_t>(i) * k];
    for (int j = 0; j < m; ++j) {
      const double* br = &b.data[static_cast<size_t>(j) * k];
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
      out(i, j) = acc;
    }
  }
  return out;
}

// out = a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) detail::shape_error("matmul_tn", a, b);
  Matrix out(a.cols, b.cols);
  const int n = a.cols, k = a.rows, m = b.cols;
  for (int p = 0; p < k; ++p) {
    const double* ar = &a.data[static_cast<size_t>(p) * n];
    const double* br = &b.data[static_cast<size_t>(p) * m];
    for (int i = 0; i < n; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* orow = &out.data[static_cast<size_t>(i) * m];
      for (int j = 0; j < m; ++j) orow[j] += av * br[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) detail::shape_error("add", a, b);
  Matrix out = a;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) detail::shape_error("sub", a, b);
  Matrix out = a;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) detail::shape_error("hadamard", a, b);
  Matrix out = a;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

// Numerically stable logistic sigmoid, applied elementwise.
inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

inline Matrix sigmoid(const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data) v = sigmoid_scalar(v);
  return out;
}

inline Matrix relu(const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

// Row-wise softmax with max subtraction before exponentiation.
inline Matrix row_softmax(const Matrix& a) {
  if (a.cols < 1) detail::shape_error("row_softmax", a);
  Matrix out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mx = a(i, 0);
    for (int j = 1; j < a.cols; ++j) mx = std::max(mx, a(i, j));
    double sum = 0.0;
    for (int j = 0; j < a.cols; ++j) {
      const double e = std::exp(a(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < a.cols; ++j) out(i, j) /= sum;
  }
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise normalization: (x - mean) / sqrt(var + eps), population variance.
inline Matrix layer_norm(const Matrix& a, double eps = kLayerNormEps) {
  if (a.cols < 1) detail::shape_error("layer_norm", a);
  Matrix out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < a.cols; ++j) mean += a(i, j);
    mean /= a.cols;
    double var = 0.0;
    for (int j = 0; j < a.cols; ++j) {
      const double d = a(i, j) - mean;
      var += d * d;
    }
    var /= a.cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < a.cols; ++j) out(i, j) = (a(i, j) - mean) * inv;
  }
  return out;
}

// Shift rows by `offset` (positive shifts toward later rows), zero fill.
// time_shift(x, +d) row t contains x row t-d: the past at temporal lag d.
inline Matrix time_shift(const Matrix& a, int offset) {
  Matrix out(a.rows, a.cols);
  for (int t = 0; t < a.rows; ++t) {
    const int src = t - offset;
    if (src < 0 || src >= a.rows) continue;
    for (int j = 0; j < a.cols; ++j) out(t, j) = a(src, j);
  }
  return out;
}

enum class PrimitiveKind {
  matmul,
  row_softmax,
  sigmoid,
  relu,
  layer_norm,
  transpose,
  hadamard,
  add,
};

inline const char* to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::matmul: return "matmul";
    case PrimitiveKind::row_softmax: return "row_softmax";
    case PrimitiveKind::sigmoid: return "sigmoid";
    case PrimitiveKind::relu: return "relu";
    case PrimitiveKind::layer_norm: return "layer_norm";
    case PrimitiveKind::transpose: return "transpose";
    case PrimitiveKind::hadamard: return "hadamard";
    case PrimitiveKind::add: return "add";
  }
  return "?";
}

// Uniform dispatch entry over the primitive kernels; validates arity.
inline Matrix primitive_forward(PrimitiveKind kind, const std::vector<Matrix>& inputs) {
  const auto need = [&](size_t n) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string(to_string(kind)) + ": expected " +
                                  std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
  };
  switch (kind) {
    case PrimitiveKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
    case PrimitiveKind::row_softmax: need(1); return row_softmax(inputs[0]);
    case PrimitiveKind::sigmoid: need(1); return sigmoid(inputs[0]);
    case PrimitiveKind::relu: need(1); return relu(inputs[0]);
    case PrimitiveKind::layer_norm: need(1); return layer_norm(inputs[0]);
    case PrimitiveKind::transpose: need(1); return transpose(inputs[0]);
    case PrimitiveKind::hadamard: need(2); return hadamard(inputs[0], inputs[1]);
    case PrimitiveKind::add: need(2); return add(inputs[0], inputs[1]);
  }
  throw std::invalid_argument("primitive_forward: unknown kind");
}

}  // namespace baformer
