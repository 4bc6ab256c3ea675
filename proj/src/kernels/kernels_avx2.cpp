// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "kernels_impl.hpp"

namespace uicl::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// crow[j0..j0+16) (+)= sum_p a[p * astride] * b[p * bstride + j0 ..]
inline void block16(const double* a, std::size_t astride, const double* b,
                    std::size_t bstride, double* crow, std::size_t kdim,
                    bool accumulate) {
  __m256d c0, c1, c2, c3;
  if (accumulate) {
    c0 = _mm256_loadu_pd(crow);
    c1 = _mm256_loadu_pd(crow + 4);
    c2 = _mm256_loadu_pd(crow + 8);
    c3 = _mm256_loadu_pd(crow + 12);
  } else {
    c0 = c1 = c2 = c3 = _mm256_setzero_pd();
  }
  for (std::size_t p = 0; p < kdim; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p * astride);
    const double* br = b + p * bstride;
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(br), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(br + 4), c1);
    c2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(br + 8), c2);
    c3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(br + 12), c3);
  }
  _mm256_storeu_pd(crow, c0);
  _mm256_storeu_pd(crow + 4, c1);
  _mm256_storeu_pd(crow + 8, c2);
  _mm256_storeu_pd(crow + 12, c3);
}

inline void block4(const double* a, std::size_t astride, const double* b,
                   std::size_t bstride, double* crow, std::size_t kdim,
                   bool accumulate) {
  __m256d c0 = accumulate ? _mm256_loadu_pd(crow) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < kdim; ++p) {
    c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p * astride),
                         _mm256_loadu_pd(b + p * bstride), c0);
  }
  _mm256_storeu_pd(crow, c0);
}

inline void block1(const double* a, std::size_t astride, const double* b,
                   std::size_t bstride, double* crow, std::size_t kdim,
                   bool accumulate) {
  double c0 = accumulate ? *crow : 0.0;
  for (std::size_t p = 0; p < kdim; ++p) c0 += a[p * astride] * b[p * bstride];
  *crow = c0;
}

// One output row: crow (+)= sum_p a[p * astride] * b[p, :]
inline void row_product(const double* a, std::size_t astride, const double* b,
                        double* crow, std::size_t kdim, std::size_t m,
                        bool accumulate) {
  std::size_t j = 0;
  for (; j + 16 <= m; j += 16) block16(a, astride, b + j, m, crow + j, kdim, accumulate);
  for (; j + 4 <= m; j += 4) block4(a, astride, b + j, m, crow + j, kdim, accumulate);
  for (; j < m; ++j) block1(a, astride, b + j, m, crow + j, kdim, accumulate);
}

// Four output rows at once:
//   c[r * cs + j] (+)= sum_q a[r * ar + q * aq] * b[q * bs + j]
// for r < 4 and j < 8 (micro4x8) or j < 4 (micro4x4). Each element is summed
// over q in order with one FMA per term, the same as block16/block4.
inline void micro4x8(const double* a, std::size_t ar, std::size_t aq, const double* b,
                     std::size_t bs, double* c, std::size_t cs, std::size_t kdim,
                     bool accumulate) {
  __m256d c00, c01, c10, c11, c20, c21, c30, c31;
  if (accumulate) {
    c00 = _mm256_loadu_pd(c);
    c01 = _mm256_loadu_pd(c + 4);
    c10 = _mm256_loadu_pd(c + cs);
    c11 = _mm256_loadu_pd(c + cs + 4);
    c20 = _mm256_loadu_pd(c + 2 * cs);
    c21 = _mm256_loadu_pd(c + 2 * cs + 4);
    c30 = _mm256_loadu_pd(c + 3 * cs);
    c31 = _mm256_loadu_pd(c + 3 * cs + 4);
  } else {
    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_pd();
  }
  for (std::size_t q = 0; q < kdim; ++q) {
    const double* br = b + q * bs;
    const __m256d b0 = _mm256_loadu_pd(br);
    const __m256d b1 = _mm256_loadu_pd(br + 4);
    const double* aq_ptr = a + q * aq;
    __m256d av = _mm256_broadcast_sd(aq_ptr);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(aq_ptr + ar);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(aq_ptr + 2 * ar);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(aq_ptr + 3 * ar);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + cs, c10);
  _mm256_storeu_pd(c + cs + 4, c11);
  _mm256_storeu_pd(c + 2 * cs, c20);
  _mm256_storeu_pd(c + 2 * cs + 4, c21);
  _mm256_storeu_pd(c + 3 * cs, c30);
  _mm256_storeu_pd(c + 3 * cs + 4, c31);
}

inline void micro4x4(const double* a, std::size_t ar, std::size_t aq, const double* b,
                     std::size_t bs, double* c, std::size_t cs, std::size_t kdim,
                     bool accumulate) {
  __m256d c0, c1, c2, c3;
  if (accumulate) {
    c0 = _mm256_loadu_pd(c);
    c1 = _mm256_loadu_pd(c + cs);
    c2 = _mm256_loadu_pd(c + 2 * cs);
    c3 = _mm256_loadu_pd(c + 3 * cs);
  } else {
    c0 = c1 = c2 = c3 = _mm256_setzero_pd();
  }
  for (std::size_t q = 0; q < kdim; ++q) {
    const __m256d bv = _mm256_loadu_pd(b + q * bs);
    const double* aq_ptr = a + q * aq;
    c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(aq_ptr), bv, c0);
    c1 = _mm256_fmadd_pd(_mm256_broadcast_sd(aq_ptr + ar), bv, c1);
    c2 = _mm256_fmadd_pd(_mm256_broadcast_sd(aq_ptr + 2 * ar), bv, c2);
    c3 = _mm256_fmadd_pd(_mm256_broadcast_sd(aq_ptr + 3 * ar), bv, c3);
  }
  _mm256_storeu_pd(c, c0);
  _mm256_storeu_pd(c + cs, c1);
  _mm256_storeu_pd(c + 2 * cs, c2);
  _mm256_storeu_pd(c + 3 * cs, c3);
}

// Rows [0, 4) of the output; ar/aq as in micro4x8.
inline void four_rows(const double* a, std::size_t ar, std::size_t aq, const double* b,
                      double* c, std::size_t kdim, std::size_t m, bool accumulate) {
  std::size_t j = 0;
  for (; j + 8 <= m; j += 8) micro4x8(a, ar, aq, b + j, m, c + j, m, kdim, accumulate);
  for (; j + 4 <= m; j += 4) micro4x4(a, ar, aq, b + j, m, c + j, m, kdim, accumulate);
  for (; j < m; ++j) {
    for (std::size_t r = 0; r < 4; ++r) {
      block1(a + r * ar, aq, b + j, m, c + r * m + j, kdim, accumulate);
    }
  }
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
  double acc = hsum(acc0);
  for (; i < n; ++i) acc += a[i];
  return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc0 = _mm256_fmadd_pd(d, d, acc0);
  }
  double acc = hsum(acc0);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t n,
             std::size_t k, std::size_t m, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) four_rows(a + i * k, k, 1, b, c + i * m, k, m, accumulate);
  for (; i < n; ++i) row_product(a + i * k, 1, b, c + i * m, k, m, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t n,
             std::size_t k, std::size_t m) {
  // Row p of c is sum_i a[i, p] * b[i, :]; a is read down a column.
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) four_rows(a + p, 1, k, b, c + p * m, n, m, true);
  for (; p < k; ++p) row_product(a + p, k, b, c + p * m, n, m, true);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t n,
             std::size_t k, std::size_t m, bool accumulate) {
  if (n < 4) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double v = dot(arow, b + j * k, k);
        crow[j] = accumulate ? crow[j] + v : v;
      }
    }
    return;
  }
  // Transposing b once lets every row use the register-blocked product.
  thread_local std::vector<double> bt;
  bt.resize(k * m);
  for (std::size_t j = 0; j < m; ++j) {
    const double* brow = b + j * k;
    for (std::size_t p = 0; p < k; ++p) bt[p * m + j] = brow[p];
  }
  gemm_nn(a, bt.data(), c, n, k, m, accumulate);
}

void exp_inplace(double* x, std::size_t n) {
  // Cephes range reduction x = k ln2 + r with a (3,4) Pade approximant of
  // e^r on |r| <= ln2 / 2.
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000009e0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  // Below lo exp rounds to 0, above hi it overflows.
  const __m256d lo = _mm256_set1_pd(-745.1332191019412);
  const __m256d hi = _mm256_set1_pd(709.782712893384);
  const __m256d inf = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  const __m256i bias = _mm256_set1_epi64x(1023);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xin = _mm256_loadu_pd(x + i);
    const __m256d xc = _mm256_min_pd(_mm256_max_pd(xin, lo), hi);
    const __m256d kf = _mm256_round_pd(_mm256_mul_pd(xc, log2e),
                                       _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(kf, ln2_hi, xc);
    r = _mm256_fnmadd_pd(kf, ln2_lo, r);
    const __m256d rr = _mm256_mul_pd(r, r);
    __m256d px = _mm256_fmadd_pd(p0, rr, p1);
    px = _mm256_fmadd_pd(px, rr, p2);
    px = _mm256_mul_pd(px, r);
    __m256d qx = _mm256_fmadd_pd(q0, rr, q1);
    qx = _mm256_fmadd_pd(qx, rr, q2);
    qx = _mm256_fmadd_pd(qx, rr, q3);
    __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
    e = _mm256_fmadd_pd(two, e, one);
    // 2^k applied as two normal factors so subnormal and near-overflow
    // results are formed by rounding once in the final multiply.
    const __m128i k32 = _mm256_cvtpd_epi32(kf);
    const __m128i k1 = _mm_srai_epi32(k32, 1);
    const __m128i k2 = _mm_sub_epi32(k32, k1);
    const auto pow2 = [&](__m128i k) {
      const __m256i k64 = _mm256_cvtepi32_epi64(k);
      return _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(k64, bias), 52));
    };
    e = _mm256_mul_pd(_mm256_mul_pd(e, pow2(k1)), pow2(k2));
    // Outside the reduced range: underflow to 0, overflow to inf, NaN kept.
    e = _mm256_blendv_pd(e, _mm256_setzero_pd(), _mm256_cmp_pd(xin, lo, _CMP_LT_OQ));
    e = _mm256_blendv_pd(e, inf, _mm256_cmp_pd(xin, hi, _CMP_GT_OQ));
    e = _mm256_blendv_pd(e, xin, _mm256_cmp_pd(xin, xin, _CMP_UNORD_Q));
    _mm256_storeu_pd(x + i, e);
  }
  for (; i < n; ++i) x[i] = std::exp(x[i]);
}

void scale_shift_rows(const double* x, const double* scale, const double* shift,
                      double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x + i * cols;
    double* orow = out + i * cols;
    std::size_t j = 0;
    for (; j + 4 <= cols; j += 4) {
      _mm256_storeu_pd(orow + j, _mm256_fmadd_pd(_mm256_loadu_pd(xr + j),
                                                 _mm256_loadu_pd(scale + j),
                                                 _mm256_loadu_pd(shift + j)));
    }
    for (; j < cols; ++j) orow[j] = xr[j] * scale[j] + shift[j];
  }
}

void column_sums(const double* x, double* out, std::size_t rows,
                 std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x + i * cols;
    std::size_t j = 0;
    for (; j + 4 <= cols; j += 4) {
      _mm256_storeu_pd(out + j, _mm256_add_pd(_mm256_loadu_pd(out + j),
                                              _mm256_loadu_pd(xr + j)));
    }
    for (; j < cols; ++j) out[j] += xr[j];
  }
}

void column_dots(const double* x, const double* y, double* out,
                 std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x + i * cols;
    const double* yr = y + i * cols;
    std::size_t j = 0;
    for (; j + 4 <= cols; j += 4) {
      _mm256_storeu_pd(out + j, _mm256_fmadd_pd(_mm256_loadu_pd(xr + j),
                                                _mm256_loadu_pd(yr + j),
                                                _mm256_loadu_pd(out + j)));
    }
    for (; j < cols; ++j) out[j] += xr[j] * yr[j];
  }
}

}  // namespace uicl::kernels::avx2
