#include "mess3/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mess3 {

bool cholesky(const Matrix& a, Matrix& lower, double pivot_tol) {
  if (a.rows != a.cols) throw std::invalid_argument("cholesky: matrix not square");
  const std::size_t n = a.rows;
  lower = Matrix(n, n);
  double max_diag = 0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  if (max_diag == 0) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      if (i == j) {
        if (s <= pivot_tol * max_diag) return false;
        lower(i, i) = std::sqrt(s);
      } else {
        lower(i, j) = s / lower(j, j);
      }
    }
  }
  return true;
}

std::vector<double> cholesky_solve(const Matrix& lower, const std::vector<double>& b) {
  const std::size_t n = lower.rows;
  if (b.size() != n) throw std::invalid_argument("cholesky_solve: size mismatch");
  std::vector<double> y(n), x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * y[k];
    y[i] = s / lower(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= lower(k, ii) * x[k];
    x[ii] = s / lower(ii, ii);
  }
  return x;
}

void symmetric_eigen(const Matrix& a, std::vector<double>& values, Matrix& vectors,
                     int max_sweeps, double tol) {
  if (a.rows != a.cols) throw std::invalid_argument("symmetric_eigen: matrix not square");
  const std::size_t n = a.rows;
  Matrix m = a;
  // accumulate rotations; rows of `vectors` end up as eigenvectors
  vectors = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) vectors(i, i) = 1.0;

  auto off_norm = [&]() {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += m(i, j) * m(i, j);
    return std::sqrt(s);
  };

  double scale = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(m(i, j)));
  if (scale == 0) scale = 1;

  for (int sweep = 0; sweep < max_sweeps && off_norm() > tol * scale * double(n); ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::abs(apq) <= tol * scale) continue;
        const double theta = (m(q, q) - m(p, p)) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1.0 / std::sqrt(t * t + 1);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vpk = vectors(p, k), vqk = vectors(q, k);
          vectors(p, k) = c * vpk - s * vqk;
          vectors(q, k) = s * vpk + c * vqk;
        }
      }
    }
  }

  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = m(i, i);

  // sort descending, carrying eigenvector rows along
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] > values[j]; });
  std::vector<double> sorted_vals(n);
  Matrix sorted_vecs(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    sorted_vals[r] = values[order[r]];
    for (std::size_t k = 0; k < n; ++k) sorted_vecs(r, k) = vectors(order[r], k);
  }
  values = std::move(sorted_vals);
  vectors = std::move(sorted_vecs);
}

}  // namespace mess3
