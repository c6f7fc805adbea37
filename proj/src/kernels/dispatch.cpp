#include <atomic>
#include <cstdlib>

#include "gsi/kernels.hpp"

namespace gsi::kernels {

namespace {

// -1 = automatic, otherwise static_cast<int>(Isa).
std::atomic<int> g_override{-1};

bool cpu_has_avx2() {
#if defined(GSI_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa detect() {
  const char* force = std::getenv("GSI_FORCE_SCALAR");
  if (force != nullptr && force[0] != '\0' && force[0] != '0') return Isa::Scalar;
  return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2: {
      static const bool has = cpu_has_avx2();
      return has;
    }
  }
  return false;
}

Isa active_isa() {
  const int o = g_override.load(std::memory_order_relaxed);
  if (o >= 0) return static_cast<Isa>(o);
  static const Isa detected = detect();
  return detected;
}

void set_isa_override(std::optional<Isa> isa) {
  if (isa && !isa_available(*isa)) isa = Isa::Scalar;
  g_override.store(isa ? static_cast<int>(*isa) : -1, std::memory_order_relaxed);
}

const KernelTable& table(Isa isa) {
#if defined(GSI_HAVE_AVX2)
  if (isa == Isa::Avx2 && isa_available(Isa::Avx2)) return detail::kAvx2Table;
#endif
  (void)isa;
  return detail::kScalarTable;
}

}  // namespace gsi::kernels
