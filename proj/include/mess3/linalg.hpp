#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mess3 {

// Fixed-size types for the 3-state process algebra.
using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

inline double& at(Mat3& m, int i, int j) { return m[std::size_t(3 * i + j)]; }
inline double at(const Mat3& m, int i, int j) { return m[std::size_t(3 * i + j)]; }

inline Mat3 mat3_zero() { return Mat3{0, 0, 0, 0, 0, 0, 0, 0, 0}; }
inline Mat3 mat3_identity() { return Mat3{1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Mat3 mat3_add(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r[i] = a[i] + b[i];
  return r;
}

inline Mat3 mat3_sub(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r[i] = a[i] - b[i];
  return r;
}

inline Mat3 mat3_scale(const Mat3& a, double s) {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r[i] = a[i] * s;
  return r;
}

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 r = mat3_zero();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) {
      const double aik = at(a, i, k);
      for (int j = 0; j < 3; ++j) at(r, i, j) += aik * at(b, k, j);
    }
  return r;
}

// row vector times matrix
inline Vec3 vec_mat(const Vec3& v, const Mat3& m) {
  Vec3 r{0, 0, 0};
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) r[std::size_t(j)] += v[std::size_t(i)] * at(m, i, j);
  return r;
}

inline double vec_sum(const Vec3& v) { return v[0] + v[1] + v[2]; }

inline Vec3 vec_add(const Vec3& a, const Vec3& b) { return Vec3{a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 vec_sub(const Vec3& a, const Vec3& b) { return Vec3{a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 vec_scale(const Vec3& a, double s) { return Vec3{a[0] * s, a[1] * s, a[2] * s}; }

inline double vec_dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double vec_norm(const Vec3& a) { return std::sqrt(vec_dot(a, a)); }

inline double max_abs_diff(const Mat3& a, const Mat3& b) {
  double m = 0;
  for (int i = 0; i < 9; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Vec3& a, const Vec3& b) {
  double m = 0;
  for (int i = 0; i < 3; ++i) m = std::max(m, std::abs(a[std::size_t(i)] - b[std::size_t(i)]));
  return m;
}

// outer product of column-of-ones with a row vector: (1 pi)_{ij} = pi_j
inline Mat3 ones_outer(const Vec3& pi) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) at(r, i, j) = pi[std::size_t(j)];
  return r;
}

// General dense row-major matrix, used by the network and analysis code.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
  Matrix r(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      double* rrow = r.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) rrow[j] += aik * brow[j];
    }
  }
  return r;
}

inline Matrix transpose(const Matrix& a) {
  Matrix r(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) r(j, i) = a(i, j);
  return r;
}

// Cholesky factorization of a symmetric positive definite matrix, in place on
// a copy. Returns false when a pivot falls below tol * max_diagonal.
bool cholesky(const Matrix& a, Matrix& lower, double pivot_tol = 1e-12);

// Solve A x = b given the lower Cholesky factor.
std::vector<double> cholesky_solve(const Matrix& lower, const std::vector<double>& b);

// Jacobi eigendecomposition of a symmetric matrix. Eigenvalues sorted
// descending; eigenvectors returned as rows of `vectors`.
void symmetric_eigen(const Matrix& a, std::vector<double>& values, Matrix& vectors,
                     int max_sweeps = 64, double tol = 1e-14);

}  // namespace mess3
