#include "edgecap/tensor/kernels.hpp"

namespace edgecap::kernels::scalar {
namespace {

template <Real T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <Real T>
void axpy(std::size_t n, T a, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <Real T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) axpy(n, a[i * k + p], b + p * n, crow);
  }
}

template <Real T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
  }
}

template <Real T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) axpy(n, a[p * m + i], b + p * n, c + i * n);
  }
}

}  // namespace

template <Real T>
const KernelTable<T>& kernels() {
  static const KernelTable<T> t{&dot<T>, &axpy<T>, &gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>};
  return t;
}

template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

}  // namespace edgecap::kernels::scalar
