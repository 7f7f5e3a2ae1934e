#include <atomic>

#include "edgecap/tensor/kernels.hpp"

namespace edgecap::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() { return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar; }

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2: {
      static const bool ok = cpu_has_avx2();
      return ok;
    }
  }
  return false;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) throw ConfigError(std::string("instruction set not supported: ") + isa_name(isa));
  current().store(isa, std::memory_order_relaxed);
}

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

template <Real T>
const KernelTable<T>& table(Isa isa) {
  return isa == Isa::Avx2 ? avx2::kernels<T>() : scalar::kernels<T>();
}

template const KernelTable<float>& table<float>(Isa);
template const KernelTable<double>& table<double>(Isa);

}  // namespace edgecap::kernels
