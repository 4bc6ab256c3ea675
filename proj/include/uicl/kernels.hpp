#pragma once

// Dense double-precision inner loops used by the transformer, the losses and
// the analysis routines. Each kernel has a scalar reference implementation and
// an AVX2/FMA variant; the variant is picked once at startup from CPUID and can
// be pinned with UICL_ISA=scalar|avx2 or force_isa().
//
// All matrices are row-major and densely packed.

#include <cstddef>
#include <string_view>

namespace uicl::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // c = a * b   (or c += a * b when accumulate)
  // a: n x k, b: k x m, c: n x m
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t n,
                  std::size_t k, std::size_t m, bool accumulate);
  // c += a^T * b
  // a: n x k, b: n x m, c: k x m
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t n,
                  std::size_t k, std::size_t m);
  // c = a * b^T   (or c += a * b^T when accumulate)
  // a: n x k, b: m x k, c: n x m
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t n,
                  std::size_t k, std::size_t m, bool accumulate);
  // out[i, j] = x[i, j] * scale[j] + shift[j]
  void (*scale_shift_rows)(const double* x, const double* scale,
                           const double* shift, double* out, std::size_t rows,
                           std::size_t cols);
  // x[i] = exp(x[i]); vector variants agree with std::exp to a few ulp
  void (*exp_inplace)(double* x, std::size_t n);
  // out[j] += sum_i x[i, j]
  void (*column_sums)(const double* x, double* out, std::size_t rows,
                      std::size_t cols);
  // out[j] += sum_i x[i, j] * y[i, j]
  void (*column_dots)(const double* x, const double* y, double* out,
                      std::size_t rows, std::size_t cols);
};

const KernelTable& scalar_table();
bool isa_available(Isa isa);
// Throws std::invalid_argument when the ISA is not available on this CPU.
const KernelTable& table(Isa isa);

// The table selected for this process.
const KernelTable& active();
void force_isa(Isa isa);
Isa parse_isa(std::string_view name);

}  // namespace uicl::kernels
