#include "edgecap/tensor/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define EDGECAP_HAVE_X86 1
#else
#define EDGECAP_HAVE_X86 0
#endif

namespace edgecap::kernels::avx2 {

#if EDGECAP_HAVE_X86

#define EDGECAP_AVX2 __attribute__((target("avx2,fma")))

namespace {

template <Real T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  EDGECAP_AVX2 static reg zero() { return _mm256_setzero_ps(); }
  EDGECAP_AVX2 static reg load(const float* p) { return _mm256_loadu_ps(p); }
  EDGECAP_AVX2 static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  EDGECAP_AVX2 static reg set1(float v) { return _mm256_set1_ps(v); }
  EDGECAP_AVX2 static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  EDGECAP_AVX2 static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  EDGECAP_AVX2 static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  EDGECAP_AVX2 static reg zero() { return _mm256_setzero_pd(); }
  EDGECAP_AVX2 static reg load(const double* p) { return _mm256_loadu_pd(p); }
  EDGECAP_AVX2 static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  EDGECAP_AVX2 static reg set1(double v) { return _mm256_set1_pd(v); }
  EDGECAP_AVX2 static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  EDGECAP_AVX2 static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  EDGECAP_AVX2 static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

template <Real T>
EDGECAP_AVX2 T dot(const T* x, const T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  auto a0 = V::zero(), a1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    a0 = V::fmadd(V::load(x + i), V::load(y + i), a0);
    a1 = V::fmadd(V::load(x + i + w), V::load(y + i + w), a1);
  }
  for (; i + w <= n; i += w) a0 = V::fmadd(V::load(x + i), V::load(y + i), a0);
  T acc = V::hsum(V::add(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <Real T>
EDGECAP_AVX2 void axpy(std::size_t n, T a, const T* x, T* y) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  const auto va = V::set1(a);
  std::size_t i = 0;
  for (; i + w <= n; i += w) V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

// Register-blocked update of a 4 x (2*width) tile of c. `a_at(r, p)` reads
// the (row r, depth p) element of the left operand, which lets the same tile
// serve both the plain and the transposed-left products.
template <Real T, typename AAt>
EDGECAP_AVX2 inline void tile_4x2(std::size_t i, std::size_t j, std::size_t n, std::size_t k, AAt a_at,
                                  const T* b, T* c) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  auto c00 = V::load(c + (i + 0) * n + j), c01 = V::load(c + (i + 0) * n + j + w);
  auto c10 = V::load(c + (i + 1) * n + j), c11 = V::load(c + (i + 1) * n + j + w);
  auto c20 = V::load(c + (i + 2) * n + j), c21 = V::load(c + (i + 2) * n + j + w);
  auto c30 = V::load(c + (i + 3) * n + j), c31 = V::load(c + (i + 3) * n + j + w);
  for (std::size_t p = 0; p < k; ++p) {
    const auto b0 = V::load(b + p * n + j);
    const auto b1 = V::load(b + p * n + j + w);
    auto a = V::set1(a_at(i + 0, p));
    c00 = V::fmadd(a, b0, c00);
    c01 = V::fmadd(a, b1, c01);
    a = V::set1(a_at(i + 1, p));
    c10 = V::fmadd(a, b0, c10);
    c11 = V::fmadd(a, b1, c11);
    a = V::set1(a_at(i + 2, p));
    c20 = V::fmadd(a, b0, c20);
    c21 = V::fmadd(a, b1, c21);
    a = V::set1(a_at(i + 3, p));
    c30 = V::fmadd(a, b0, c30);
    c31 = V::fmadd(a, b1, c31);
  }
  V::store(c + (i + 0) * n + j, c00);
  V::store(c + (i + 0) * n + j + w, c01);
  V::store(c + (i + 1) * n + j, c10);
  V::store(c + (i + 1) * n + j + w, c11);
  V::store(c + (i + 2) * n + j, c20);
  V::store(c + (i + 2) * n + j + w, c21);
  V::store(c + (i + 3) * n + j, c30);
  V::store(c + (i + 3) * n + j + w, c31);
}

template <Real T, typename AAt>
EDGECAP_AVX2 void gemm_blocked(std::size_t m, std::size_t n, std::size_t k, AAt a_at, const T* b, T* c) {
  constexpr std::size_t tw = 2 * Vec<T>::width;
  const std::size_t m4 = m - m % 4;
  const std::size_t nt = n - n % tw;
  for (std::size_t i = 0; i < m4; i += 4) {
    for (std::size_t j = 0; j < nt; j += tw) tile_4x2<T>(i, j, n, k, a_at, b, c);
  }
  // Column remainder for the blocked rows, then leftover rows in full.
  if (nt < n) {
    for (std::size_t i = 0; i < m4; ++i) {
      for (std::size_t p = 0; p < k; ++p) axpy<T>(n - nt, a_at(i, p), b + p * n + nt, c + i * n + nt);
    }
  }
  for (std::size_t i = m4; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) axpy<T>(n, a_at(i, p), b + p * n, c + i * n);
  }
}

template <Real T>
EDGECAP_AVX2 void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm_blocked<T>(m, n, k, [a, k](std::size_t r, std::size_t p) { return a[r * k + p]; }, b, c);
}

template <Real T>
EDGECAP_AVX2 void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm_blocked<T>(m, n, k, [a, m](std::size_t r, std::size_t p) { return a[p * m + r]; }, b, c);
}

// c += a b^T: one row of a against four rows of b at a time.
template <Real T>
EDGECAP_AVX2 void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  const std::size_t n4 = n - n % 4;
  const std::size_t kw = k - k % w;
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    for (std::size_t j = 0; j < n4; j += 4) {
      const T* b0 = b + (j + 0) * k;
      const T* b1 = b + (j + 1) * k;
      const T* b2 = b + (j + 2) * k;
      const T* b3 = b + (j + 3) * k;
      auto s0 = V::zero(), s1 = V::zero(), s2 = V::zero(), s3 = V::zero();
      for (std::size_t p = 0; p < kw; p += w) {
        const auto av = V::load(ar + p);
        s0 = V::fmadd(av, V::load(b0 + p), s0);
        s1 = V::fmadd(av, V::load(b1 + p), s1);
        s2 = V::fmadd(av, V::load(b2 + p), s2);
        s3 = V::fmadd(av, V::load(b3 + p), s3);
      }
      T r0 = V::hsum(s0), r1 = V::hsum(s1), r2 = V::hsum(s2), r3 = V::hsum(s3);
      for (std::size_t p = kw; p < k; ++p) {
        r0 += ar[p] * b0[p];
        r1 += ar[p] * b1[p];
        r2 += ar[p] * b2[p];
        r3 += ar[p] * b3[p];
      }
      T* cr = c + i * n + j;
      cr[0] += r0;
      cr[1] += r1;
      cr[2] += r2;
      cr[3] += r3;
    }
    for (std::size_t j = n4; j < n; ++j) c[i * n + j] += dot<T>(ar, b + j * k, k);
  }
}

}  // namespace

template <Real T>
const KernelTable<T>& kernels() {
  static const KernelTable<T> t{&dot<T>, &axpy<T>, &gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>};
  return t;
}

#else

template <Real T>
const KernelTable<T>& kernels() {
  return scalar::kernels<T>();
}

#endif

template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

}  // namespace edgecap::kernels::avx2
