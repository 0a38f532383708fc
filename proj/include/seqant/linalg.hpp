#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace seqant {

using Vector = std::vector<double>;

/// Dense row-major matrix. Everything in this library is double precision;
/// model sizes stay small enough that hand-rolled kernels beat the cost of
/// carrying a BLAS dependency and keep results fully deterministic.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool empty() const { return data.empty(); }
  std::size_t size() const { return data.size(); }

  static Matrix identity(std::size_t n);

  bool operator==(const Matrix& other) const = default;
};

std::string shape_str(const Matrix& m);

/// result[i] = sum_j A[i][j] * x[j]; throws on A.cols != x.size().
Vector matvec(const Matrix& a, const Vector& x);

/// result[j] = sum_i A[i][j] * x[i] (transpose apply); throws on A.rows != x.size().
Vector matvec_transposed(const Matrix& a, const Vector& x);

/// out += A x (no allocation; dims must already agree).
void matvec_add(const Matrix& a, const Vector& x, Vector& out);

/// out += A^T x.
void matvec_transposed_add(const Matrix& a, const Vector& x, Vector& out);

/// A += u v^T.
void add_outer(Matrix& a, const Vector& u, const Vector& v);

/// y += alpha * x.
void axpy(double alpha, const Vector& x, Vector& y);

/// Max-subtracted softmax; entries in (0,1), sum 1. Throws on NaN input.
Vector softmax(const Vector& v);

enum class Activation { Sigmoid, Tanh };

double sigmoid(double x);

/// Element-wise sigmoid or tanh. Throws on non-finite input.
Vector apply_activation(const Vector& v, Activation kind);

}  // namespace seqant
