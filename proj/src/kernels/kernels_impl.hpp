#pragma once

#include <cstddef>

namespace uicl::kernels {

#define UICL_DECLARE_KERNELS                                                   \
  double dot(const double* a, const double* b, std::size_t n);                \
  double sum(const double* a, std::size_t n);                                 \
  double squared_distance(const double* a, const double* b, std::size_t n);   \
  void axpy(double alpha, const double* x, double* y, std::size_t n);         \
  void gemm_nn(const double* a, const double* b, double* c, std::size_t n,    \
               std::size_t k, std::size_t m, bool accumulate);                \
  void gemm_tn(const double* a, const double* b, double* c, std::size_t n,    \
               std::size_t k, std::size_t m);                                 \
  void gemm_nt(const double* a, const double* b, double* c, std::size_t n,    \
               std::size_t k, std::size_t m, bool accumulate);                \
  void scale_shift_rows(const double* x, const double* scale,                 \
                        const double* shift, double* out, std::size_t rows,   \
                        std::size_t cols);                                    \
  void exp_inplace(double* x, std::size_t n);                                 \
  void column_sums(const double* x, double* out, std::size_t rows,            \
                   std::size_t cols);                                         \
  void column_dots(const double* x, const double* y, double* out,             \
                   std::size_t rows, std::size_t cols);

namespace scalar {
UICL_DECLARE_KERNELS
}

#if defined(UICL_HAVE_AVX2)
namespace avx2 {
UICL_DECLARE_KERNELS
}
#endif

#undef UICL_DECLARE_KERNELS

}  // namespace uicl::kernels
