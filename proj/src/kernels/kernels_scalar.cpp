#include <algorithm>
#include <cmath>

#include "kernels_impl.hpp"

namespace uicl::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t n,
             std::size_t k, std::size_t m, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    if (!accumulate) std::fill(crow, crow + m, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t n,
             std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      double* crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t n,
             std::size_t k, std::size_t m, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double v = dot(arow, b + j * k, k);
      c[i * m + j] = accumulate ? c[i * m + j] + v : v;
    }
  }
}

void exp_inplace(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(x[i]);
}

void scale_shift_rows(const double* x, const double* scale, const double* shift,
                      double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x + i * cols;
    double* orow = out + i * cols;
    for (std::size_t j = 0; j < cols; ++j) orow[j] = xr[j] * scale[j] + shift[j];
  }
}

void column_sums(const double* x, double* out, std::size_t rows,
                 std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += xr[j];
  }
}

void column_dots(const double* x, const double* y, double* out,
                 std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x + i * cols;
    const double* yr = y + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += xr[j] * yr[j];
  }
}

}  // namespace uicl::kernels::scalar
