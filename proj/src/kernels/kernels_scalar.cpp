#include <algorithm>
#include <cstdlib>

#include "gsi/kernels.hpp"

namespace gsi::kernels {
namespace {

void squared_distances(const double* xs, const double* ys, std::size_t n,
                       double qx, double qy, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - qx;
    const double dy = ys[i] - qy;
    out[i] = dx * dx + dy * dy;
  }
}

void min_squared_distances(const double* xs, const double* ys, std::size_t n,
                           double qx, double qy, double* dmin) {
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - qx;
    const double dy = ys[i] - qy;
    const double d = dx * dx + dy * dy;
    dmin[i] = d < dmin[i] ? d : dmin[i];
  }
}

std::size_t count_changed_pixels(const std::uint16_t* ids_a,
                                 const std::uint16_t* ids_b,
                                 const std::uint8_t* rgb_a,
                                 const std::uint8_t* rgb_b, std::size_t n,
                                 std::uint8_t threshold) {
  std::size_t changed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool diff = ids_a[i] != ids_b[i];
    for (int c = 0; c < 3 && !diff; ++c) {
      diff = std::abs(int(rgb_a[3 * i + c]) - int(rgb_b[3 * i + c])) > threshold;
    }
    changed += diff;
  }
  return changed;
}

void convolve_rows(const double* in, int width, int height, const double* taps,
                   int ntaps, double* out) {
  const int ow = width - ntaps + 1;
  for (int y = 0; y < height; ++y) {
    const double* row = in + static_cast<std::size_t>(y) * width;
    double* dst = out + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < ntaps; ++k) acc += taps[k] * row[x + k];
      dst[x] = acc;
    }
  }
}

void convolve_cols(const double* in, int width, int height, const double* taps,
                   int ntaps, double* out) {
  const int oh = height - ntaps + 1;
  for (int y = 0; y < oh; ++y) {
    double* dst = out + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = 0; k < ntaps; ++k) {
        acc += taps[k] * in[static_cast<std::size_t>(y + k) * width + x];
      }
      dst[x] = acc;
    }
  }
}

}  // namespace

namespace detail {
const KernelTable kScalarTable{squared_distances, min_squared_distances,
                               count_changed_pixels, convolve_rows,
                               convolve_cols};
}  // namespace detail

}  // namespace gsi::kernels
