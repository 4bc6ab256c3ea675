#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_impl.hpp"
#include "uicl/kernels.hpp"

namespace uicl::kernels {
namespace {

constexpr KernelTable kScalarTable{
    Isa::kScalar,         "scalar",
    scalar::dot,          scalar::sum,
    scalar::squared_distance, scalar::axpy,
    scalar::gemm_nn,      scalar::gemm_tn,
    scalar::gemm_nt,      scalar::scale_shift_rows,
    scalar::exp_inplace,
    scalar::column_sums,  scalar::column_dots,
};

#if defined(UICL_HAVE_AVX2)
constexpr KernelTable kAvx2Table{
    Isa::kAvx2,         "avx2",
    avx2::dot,          avx2::sum,
    avx2::squared_distance, avx2::axpy,
    avx2::gemm_nn,      avx2::gemm_tn,
    avx2::gemm_nt,      avx2::scale_shift_rows,
    avx2::exp_inplace,
    avx2::column_sums,  avx2::column_dots,
};
#endif

bool cpu_has_avx2() {
#if defined(UICL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* select_default() {
  if (const char* env = std::getenv("UICL_ISA"); env != nullptr && *env != '\0') {
    return &table(parse_isa(env));
  }
  return cpu_has_avx2() ? &table(Isa::kAvx2) : &kScalarTable;
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{select_default()};
  return slot;
}

}  // namespace

const KernelTable& scalar_table() { return kScalarTable; }

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
      return cpu_has_avx2();
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("requested kernel ISA is not available on this CPU");
  }
#if defined(UICL_HAVE_AVX2)
  if (isa == Isa::kAvx2) return kAvx2Table;
#endif
  return kScalarTable;
}

const KernelTable& active() { return *active_slot().load(std::memory_order_acquire); }

void force_isa(Isa isa) { active_slot().store(&table(isa), std::memory_order_release); }

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::kScalar;
  if (name == "avx2") return Isa::kAvx2;
  throw std::invalid_argument("unknown kernel ISA '" + std::string(name) + "'");
}

}  // namespace uicl::kernels
