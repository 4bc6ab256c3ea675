#pragma once

// Building blocks shared by the transformer forward and backward passes.

#include <cmath>
#include <span>
#include <vector>

#include "uicl/kernels.hpp"
#include "uicl/masked_dit.hpp"

namespace uicl::ops {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// s[i] = sigmoid(x[i]) using the vector exp kernel.
inline void sigmoid_into(const double* x, double* s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) s[i] = -x[i];
  kernels::active().exp_inplace(s, n);
  for (std::size_t i = 0; i < n; ++i) s[i] = 1.0 / (1.0 + s[i]);
}

// out = silu(x) elementwise.
inline void silu_into(const Matrix& x, Matrix& out) {
  out = Matrix(x.rows, x.cols);
  sigmoid_into(x.ptr(), out.ptr(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] *= x.data[i];
}

// g *= silu'(x) elementwise.
inline void scale_by_silu_grad(const Matrix& x, Matrix& g) {
  std::vector<double> s(x.size());
  sigmoid_into(x.ptr(), s.data(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    g.data[i] *= s[i] * (1.0 + x.data[i] * (1.0 - s[i]));
  }
}

// y = x W + b
inline Matrix linear(const Matrix& x, const ModelParameters& p, const LinearSlot& s) {
  Matrix y(x.rows, s.out);
  const auto& k = kernels::active();
  k.gemm_nn(x.ptr(), p.at(s.weight), y.ptr(), x.rows, s.in, s.out, false);
  const double* b = p.at(s.bias);
  for (std::size_t i = 0; i < x.rows; ++i) k.axpy(1.0, b, y.ptr() + i * s.out, s.out);
  return y;
}

inline void linear_vector(std::span<const double> x, const ModelParameters& p,
                          const LinearSlot& s, std::span<double> out) {
  std::copy_n(p.at(s.bias), s.out, out.begin());
  kernels::active().gemm_nn(x.data(), p.at(s.weight), out.data(), 1, s.in, s.out, true);
}

// Accumulates dW += x^T dy and db += colsum(dy); writes dx = dy W^T if dx is
// non-null.
inline void linear_backward(const double* x, const double* dy, std::size_t rows,
                            const ModelParameters& p, const LinearSlot& s,
                            ParameterGradients& g, double* dx) {
  const auto& k = kernels::active();
  k.gemm_tn(x, dy, g.values.data() + s.weight, rows, s.in, s.out);
  k.column_sums(dy, g.values.data() + s.bias, rows, s.out);
  if (dx != nullptr) k.gemm_nt(dy, p.at(s.weight), dx, rows, s.out, s.in, false);
}

inline void layer_norm_forward(const Matrix& x, const ModelParameters& p, const NormSlot& s,
                               Matrix& hat, Matrix& out, std::vector<double>& rstd) {
  const std::size_t n = x.rows;
  const std::size_t d = x.cols;
  hat = Matrix(n, d);
  out = Matrix(n, d);
  rstd.assign(n, 0.0);
  const double* scale = p.at(s.scale);
  const double* offset = p.at(s.offset);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.ptr() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[i] = r;
    double* hr = hat.ptr() + i * d;
    for (std::size_t j = 0; j < d; ++j) hr[j] = (xr[j] - mean) * r;
  }
  kernels::active().scale_shift_rows(hat.ptr(), scale, offset, out.ptr(), n, d);
}

// Accumulates scale/offset gradients, returns dx.
inline Matrix layer_norm_backward(const Matrix& hat, const std::vector<double>& rstd,
                                  const Matrix& dout, const ModelParameters& p,
                                  const NormSlot& s, ParameterGradients& g) {
  const std::size_t n = hat.rows;
  const std::size_t d = hat.cols;
  const auto& k = kernels::active();
  k.column_dots(dout.ptr(), hat.ptr(), g.values.data() + s.scale, n, d);
  k.column_sums(dout.ptr(), g.values.data() + s.offset, n, d);
  const double* scale = p.at(s.scale);
  Matrix dx(n, d);
  std::vector<double> dhat(d);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* dr = dout.ptr() + i * d;
    const double* hr = hat.ptr() + i * d;
    double mean_dhat = 0.0;
    double mean_dhat_hat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dhat[j] = dr[j] * scale[j];
      mean_dhat += dhat[j];
      mean_dhat_hat += dhat[j] * hr[j];
    }
    mean_dhat *= inv_d;
    mean_dhat_hat *= inv_d;
    double* xr = dx.ptr() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      xr[j] = rstd[i] * (dhat[j] - mean_dhat - hr[j] * mean_dhat_hat);
    }
  }
  return dx;
}

inline void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double* r = m.ptr() + i * m.cols;
    double mx = r[0];
    for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
    for (std::size_t j = 0; j < m.cols; ++j) r[j] -= mx;
    kernels::active().exp_inplace(r, m.cols);
    double total = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) total += r[j];
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < m.cols; ++j) r[j] *= inv;
  }
}

// dst = src[:, col0 : col0 + dst.cols]
inline void copy_columns(const Matrix& src, std::size_t col0, Matrix& dst) {
  for (std::size_t i = 0; i < src.rows; ++i) {
    std::copy_n(src.ptr() + i * src.cols + col0, dst.cols, dst.ptr() + i * dst.cols);
  }
}

// dst[:, col0 : col0 + src.cols] = src
inline void store_columns(const Matrix& src, std::size_t col0, Matrix& dst) {
  for (std::size_t i = 0; i < src.rows; ++i) {
    std::copy_n(src.ptr() + i * src.cols, src.cols, dst.ptr() + i * dst.cols + col0);
  }
}

}  // namespace uicl::ops
