#include "seqant/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace seqant {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows) + "x" + std::to_string(m.cols) + ")";
}

Vector matvec(const Matrix& a, const Vector& x) {
  if (a.cols != x.size()) {
    throw std::invalid_argument("matvec: matrix " + shape_str(a) +
                                " incompatible with vector of length " +
                                std::to_string(x.size()));
  }
  Vector out(a.rows, 0.0);
  matvec_add(a, x, out);
  return out;
}

Vector matvec_transposed(const Matrix& a, const Vector& x) {
  if (a.rows != x.size()) {
    throw std::invalid_argument("matvec_transposed: matrix " + shape_str(a) +
                                " incompatible with vector of length " +
                                std::to_string(x.size()));
  }
  Vector out(a.cols, 0.0);
  matvec_transposed_add(a, x, out);
  return out;
}

void matvec_add(const Matrix& a, const Vector& x, Vector& out) {
  const double* row = a.data.data();
  for (std::size_t i = 0; i < a.rows; ++i, row += a.cols) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * x[j];
    out[i] += acc;
  }
}

void matvec_transposed_add(const Matrix& a, const Vector& x, Vector& out) {
  const double* row = a.data.data();
  for (std::size_t i = 0; i < a.rows; ++i, row += a.cols) {
    const double xi = x[i];
    for (std::size_t j = 0; j < a.cols; ++j) out[j] += row[j] * xi;
  }
}

void add_outer(Matrix& a, const Vector& u, const Vector& v) {
  double* row = a.data.data();
  for (std::size_t i = 0; i < a.rows; ++i, row += a.cols) {
    const double ui = u[i];
    for (std::size_t j = 0; j < a.cols; ++j) row[j] += ui * v[j];
  }
}

void axpy(double alpha, const Vector& x, Vector& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vector softmax(const Vector& v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty input");
  for (double e : v) {
    if (std::isnan(e)) throw std::invalid_argument("softmax: NaN in input");
  }
  const double m = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (double& e : out) e /= sum;
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector apply_activation(const Vector& v, Activation kind) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw std::invalid_argument("apply_activation: non-finite input at index " +
                                  std::to_string(i));
    }
    out[i] = kind == Activation::Sigmoid ? sigmoid(v[i]) : std::tanh(v[i]);
  }
  return out;
}

}  // namespace seqant
