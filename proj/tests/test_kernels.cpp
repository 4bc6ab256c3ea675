#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "test_support.hpp"
#include "uicl/kernels.hpp"

namespace uicl {
namespace {

using kernels::Isa;
using kernels::KernelTable;

const KernelTable* avx2_or_skip() {
  if (!kernels::isa_available(Isa::kAvx2)) return nullptr;
  return &kernels::table(Isa::kAvx2);
}

#define REQUIRE_AVX2(var)                                      \
  const KernelTable* var = avx2_or_skip();                     \
  if ((var) == nullptr) GTEST_SKIP() << "AVX2 not available"

// Naive oracles, independent of both kernel tables.
std::vector<double> naive_nn(const Matrix& a, const Matrix& b) {
  std::vector<double> c(a.rows * b.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < a.cols; ++p) s += static_cast<long double>(a(i, p)) * b(p, j);
      c[i * b.cols + j] = static_cast<double>(s);
    }
  return c;
}

void expect_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_NEAR(got[i], want[i], tol * (1.0 + std::abs(want[i]))) << "index " << i;
  }
}

const std::size_t kLengths[] = {0, 1, 3, 4, 5, 7, 8, 15, 16, 17, 33, 64, 127, 1000};

TEST(Kernels, ScalarTableIsAlwaysAvailable) {
  EXPECT_TRUE(kernels::isa_available(Isa::kScalar));
  EXPECT_EQ(kernels::scalar_table().isa, Isa::kScalar);
  EXPECT_EQ(kernels::parse_isa("scalar"), Isa::kScalar);
  EXPECT_EQ(kernels::parse_isa("avx2"), Isa::kAvx2);
  EXPECT_THROW(kernels::parse_isa("neon"), std::invalid_argument);
}

TEST(Kernels, ScalarReductionsMatchOracle) {
  const auto& s = kernels::scalar_table();
  for (std::size_t n : kLengths) {
    const auto a = test::random_vector(n, 1 + n);
    const auto b = test::random_vector(n, 100 + n);
    double dot = 0, sum = 0, dist = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += a[i] * b[i];
      sum += a[i];
      dist += (a[i] - b[i]) * (a[i] - b[i]);
    }
    EXPECT_NEAR(s.dot(a.data(), b.data(), n), dot, 1e-12 * (1 + n));
    EXPECT_NEAR(s.sum(a.data(), n), sum, 1e-12 * (1 + n));
    EXPECT_NEAR(s.squared_distance(a.data(), b.data(), n), dist, 1e-12 * (1 + n));
  }
}

TEST(Kernels, Avx2ReductionsMatchScalar) {
  REQUIRE_AVX2(v);
  const auto& s = kernels::scalar_table();
  for (std::size_t n : kLengths) {
    const auto a = test::random_vector(n, 1 + n);
    const auto b = test::random_vector(n, 100 + n);
    const double tol = 1e-13 * (1 + n);
    EXPECT_NEAR(v->dot(a.data(), b.data(), n), s.dot(a.data(), b.data(), n), tol) << n;
    EXPECT_NEAR(v->sum(a.data(), n), s.sum(a.data(), n), tol) << n;
    EXPECT_NEAR(v->squared_distance(a.data(), b.data(), n),
                s.squared_distance(a.data(), b.data(), n), tol)
        << n;
  }
}

TEST(Kernels, AxpyAgreesAcrossIsas) {
  REQUIRE_AVX2(v);
  const auto& s = kernels::scalar_table();
  for (std::size_t n : kLengths) {
    const auto x = test::random_vector(n, 7 + n);
    auto y1 = test::random_vector(n, 9 + n);
    auto y2 = y1;
    s.axpy(-0.37, x.data(), y1.data(), n);
    v->axpy(-0.37, x.data(), y2.data(), n);
    // One FMA versus multiply-then-add: at most one rounding apart.
    expect_close(y2, y1, 1e-15);
  }
}

struct GemmShape {
  std::size_t n, k, m;
};
const GemmShape kShapes[] = {{1, 1, 1},  {2, 3, 5},   {4, 8, 8},    {5, 7, 9},
                             {9, 16, 3}, {17, 5, 33}, {64, 32, 32}, {13, 128, 1}};

TEST(Kernels, GemmVariantsMatchNaiveOracle) {
  std::vector<const KernelTable*> tables{&kernels::scalar_table()};
  if (kernels::isa_available(Isa::kAvx2)) tables.push_back(&kernels::table(Isa::kAvx2));
  for (const KernelTable* t : tables) {
    for (const auto& sh : kShapes) {
      SCOPED_TRACE(std::string(t->name) + " " + std::to_string(sh.n) + "x" +
                   std::to_string(sh.k) + "x" + std::to_string(sh.m));
      const Matrix a = test::random_matrix(sh.n, sh.k, 11);
      const Matrix b = test::random_matrix(sh.k, sh.m, 12);
      const auto want = naive_nn(a, b);

      std::vector<double> c(sh.n * sh.m, 5.0);
      t->gemm_nn(a.ptr(), b.ptr(), c.data(), sh.n, sh.k, sh.m, false);
      expect_close(c, want, 1e-13);

      // Accumulate onto an existing buffer.
      std::vector<double> acc(sh.n * sh.m, 1.0);
      t->gemm_nn(a.ptr(), b.ptr(), acc.data(), sh.n, sh.k, sh.m, true);
      auto want_acc = want;
      for (double& w : want_acc) w += 1.0;
      expect_close(acc, want_acc, 1e-13);

      // a * b^T with b stored as m x k.
      Matrix bt(sh.m, sh.k);
      for (std::size_t p = 0; p < sh.k; ++p)
        for (std::size_t j = 0; j < sh.m; ++j) bt(j, p) = b(p, j);
      std::vector<double> cnt(sh.n * sh.m, 5.0);
      t->gemm_nt(a.ptr(), bt.ptr(), cnt.data(), sh.n, sh.k, sh.m, false);
      expect_close(cnt, want, 1e-13);
      std::vector<double> cnt_acc(sh.n * sh.m, 1.0);
      t->gemm_nt(a.ptr(), bt.ptr(), cnt_acc.data(), sh.n, sh.k, sh.m, true);
      expect_close(cnt_acc, want_acc, 1e-13);

      // a^T * b with a stored as k x n: c += (k x n)^T (k x m).
      Matrix at(sh.k, sh.n);
      for (std::size_t i = 0; i < sh.n; ++i)
        for (std::size_t p = 0; p < sh.k; ++p) at(p, i) = a(i, p);
      std::vector<double> ctn(sh.n * sh.m, 1.0);
      t->gemm_tn(at.ptr(), b.ptr(), ctn.data(), sh.k, sh.n, sh.m);
      expect_close(ctn, want_acc, 1e-13);
    }
  }
}

TEST(Kernels, RowAndColumnKernelsAgreeAcrossIsas) {
  REQUIRE_AVX2(v);
  const auto& s = kernels::scalar_table();
  for (const auto& sh : kShapes) {
    const Matrix x = test::random_matrix(sh.n, sh.m, 21);
    const Matrix y = test::random_matrix(sh.n, sh.m, 22);
    const auto scale = test::random_vector(sh.m, 23);
    const auto shift = test::random_vector(sh.m, 24);

    std::vector<double> o1(x.size()), o2(x.size());
    s.scale_shift_rows(x.ptr(), scale.data(), shift.data(), o1.data(), sh.n, sh.m);
    v->scale_shift_rows(x.ptr(), scale.data(), shift.data(), o2.data(), sh.n, sh.m);
    expect_close(o2, o1, 1e-15);

    std::vector<double> c1(sh.m, 0.5), c2(sh.m, 0.5);
    s.column_sums(x.ptr(), c1.data(), sh.n, sh.m);
    v->column_sums(x.ptr(), c2.data(), sh.n, sh.m);
    expect_close(c2, c1, 1e-13);

    std::vector<double> d1(sh.m, 0.5), d2(sh.m, 0.5);
    s.column_dots(x.ptr(), y.ptr(), d1.data(), sh.n, sh.m);
    v->column_dots(x.ptr(), y.ptr(), d2.data(), sh.n, sh.m);
    expect_close(d2, d1, 1e-13);
  }
}

TEST(Kernels, ExpMatchesStdExp) {
  std::vector<const KernelTable*> tables{&kernels::scalar_table()};
  if (kernels::isa_available(Isa::kAvx2)) tables.push_back(&kernels::table(Isa::kAvx2));
  std::vector<double> x;
  for (int i = -7000; i <= 7000; ++i) x.push_back(i * 0.1013);
  // Subnormal and near-overflow tails.
  for (int i = 0; i <= 400; ++i) x.push_back(-745.1 + i * 0.0925);
  for (int i = 0; i <= 100; ++i) x.push_back(709.0 + i * 0.0078);
  const double tiny = std::numeric_limits<double>::denorm_min();
  for (const KernelTable* t : tables) {
    auto y = x;
    t->exp_inplace(y.data(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double want = std::exp(x[i]);
      ASSERT_TRUE(std::isfinite(want));
      EXPECT_NEAR(y[i], want, std::max(4e-15 * want, tiny)) << t->name << " x=" << x[i];
    }
  }
}

TEST(Kernels, ExpSpecialValues) {
  REQUIRE_AVX2(v);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> x{-inf, -1000.0, -745.2, 0.0, 710.0, inf,
                        std::numeric_limits<double>::quiet_NaN(), 1.0};
  v->exp_inplace(x.data(), x.size());
  EXPECT_EQ(x[0], 0.0);
  EXPECT_EQ(x[1], 0.0);
  EXPECT_GE(x[2], 0.0);
  EXPECT_LT(x[2], 1e-300);
  EXPECT_EQ(x[3], 1.0);
  EXPECT_EQ(x[4], inf);
  EXPECT_EQ(x[5], inf);
  EXPECT_TRUE(std::isnan(x[6]));
  EXPECT_NEAR(x[7], std::exp(1.0), 1e-15);
}

TEST(Kernels, ForceIsaSwitchesActiveTable) {
  const Isa before = kernels::active().isa;
  kernels::force_isa(Isa::kScalar);
  EXPECT_EQ(kernels::active().isa, Isa::kScalar);
  kernels::force_isa(before);
  EXPECT_EQ(kernels::active().isa, before);
}

}  // namespace
}  // namespace uicl
