#pragma once

// Data-parallel inner loops with a scalar reference implementation and
// vectorized variants chosen at runtime. Every variant must produce results
// bit-identical to the scalar kernel: same per-element operation order, no
// fused multiply-add (the build sets -ffp-contract=off).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace gsi::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

/// True when the variant is compiled in and the CPU supports it.
bool isa_available(Isa isa);

/// The ISA used by `active()`. Picks the widest available variant unless the
/// GSI_FORCE_SCALAR environment variable is set or an override is active.
Isa active_isa();

/// Test hook. Passing nullopt restores automatic selection.
void set_isa_override(std::optional<Isa> isa);

struct KernelTable {
  /// out[i] = (xs[i]-qx)^2 + (ys[i]-qy)^2
  void (*squared_distances)(const double* xs, const double* ys, std::size_t n,
                            double qx, double qy, double* out);
  /// dmin[i] = min(dmin[i], (xs[i]-qx)^2 + (ys[i]-qy)^2)
  void (*min_squared_distances)(const double* xs, const double* ys,
                                std::size_t n, double qx, double qy,
                                double* dmin);
  /// Pixels whose instance ids differ or where any RGB channel differs by
  /// more than `threshold`.
  std::size_t (*count_changed_pixels)(const std::uint16_t* ids_a,
                                      const std::uint16_t* ids_b,
                                      const std::uint8_t* rgb_a,
                                      const std::uint8_t* rgb_b, std::size_t n,
                                      std::uint8_t threshold);
  /// Valid-mode horizontal filter: out is (width - ntaps + 1) x height,
  /// out[y][x] = sum_k taps[k] * in[y][x + k], summed in k order.
  void (*convolve_rows)(const double* in, int width, int height,
                        const double* taps, int ntaps, double* out);
  /// Valid-mode vertical filter: out is width x (height - ntaps + 1).
  void (*convolve_cols)(const double* in, int width, int height,
                        const double* taps, int ntaps, double* out);
};

const KernelTable& table(Isa isa);
inline const KernelTable& active() { return table(active_isa()); }

namespace detail {
extern const KernelTable kScalarTable;
#if defined(GSI_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif
}  // namespace detail

}  // namespace gsi::kernels
