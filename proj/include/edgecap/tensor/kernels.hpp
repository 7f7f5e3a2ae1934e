#pragma once

// Dense inner-loop kernels. Every kernel has a scalar reference variant
// (strict left-to-right accumulation) and an AVX2+FMA variant; the variant is
// chosen once at startup from CPUID and can be overridden for testing.

#include <cstddef>
#include <cstdint>

#include "edgecap/tensor/tensor.hpp"

namespace edgecap::kernels {

enum class Isa : std::uint8_t { Scalar, Avx2 };

bool isa_supported(Isa isa);
Isa active_isa();
// Throws ConfigError when the CPU lacks the requested instruction set.
void set_active_isa(Isa isa);
const char* isa_name(Isa isa);

class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : saved_(active_isa()) { set_active_isa(isa); }
  ~ScopedIsa() { set_active_isa(saved_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa saved_;
};

template <Real T>
struct KernelTable {
  T (*dot)(const T* x, const T* y, std::size_t n);
  // y += a * x
  void (*axpy)(std::size_t n, T a, const T* x, T* y);
  // c[m x n] += a[m x k] * b[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
  // c[m x n] += a[m x k] * b[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
  // c[m x n] += a[k x m]^T * b[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
};

template <Real T>
const KernelTable<T>& table(Isa isa);

template <Real T>
const KernelTable<T>& active() {
  return table<T>(active_isa());
}

template <Real T>
T dot(const T* x, const T* y, std::size_t n) {
  return active<T>().dot(x, y, n);
}
template <Real T>
void axpy(std::size_t n, T a, const T* x, T* y) {
  active<T>().axpy(n, a, x, y);
}
template <Real T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  active<T>().gemm_nn(m, n, k, a, b, c);
}
template <Real T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  active<T>().gemm_nt(m, n, k, a, b, c);
}
template <Real T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  active<T>().gemm_tn(m, n, k, a, b, c);
}

namespace scalar {
template <Real T>
const KernelTable<T>& kernels();
}
namespace avx2 {
template <Real T>
const KernelTable<T>& kernels();
}

}  // namespace edgecap::kernels
