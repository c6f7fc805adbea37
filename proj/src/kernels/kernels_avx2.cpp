// Compiled with -mavx2. Only reached after runtime CPU detection.

#include <immintrin.h>

#include <array>
#include <cstdlib>

#include "gsi/kernels.hpp"

namespace gsi::kernels {
namespace {

void squared_distances(const double* xs, const double* ys, std::size_t n,
                       double qx, double qy, double* out) {
  const __m256d vqx = _mm256_set1_pd(qx);
  const __m256d vqy = _mm256_set1_pd(qy);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(xs + i), vqx);
    const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(ys + i), vqy);
    _mm256_storeu_pd(out + i,
                     _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy)));
  }
  for (; i < n; ++i) {
    const double dx = xs[i] - qx;
    const double dy = ys[i] - qy;
    out[i] = dx * dx + dy * dy;
  }
}

void min_squared_distances(const double* xs, const double* ys, std::size_t n,
                           double qx, double qy, double* dmin) {
  const __m256d vqx = _mm256_set1_pd(qx);
  const __m256d vqy = _mm256_set1_pd(qy);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(xs + i), vqx);
    const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(ys + i), vqy);
    const __m256d d = _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy));
    _mm256_storeu_pd(dmin + i, _mm256_min_pd(d, _mm256_loadu_pd(dmin + i)));
  }
  for (; i < n; ++i) {
    const double dx = xs[i] - qx;
    const double dy = ys[i] - qy;
    const double d = dx * dx + dy * dy;
    dmin[i] = d < dmin[i] ? d : dmin[i];
  }
}

// pshufb masks that gather channel c of 16 interleaved RGB pixels out of
// source vector k (of the three 16-byte vectors covering 48 bytes).
struct DeinterleaveMasks {
  __m128i m[3][3];
  DeinterleaveMasks() {
    for (int k = 0; k < 3; ++k) {
      for (int c = 0; c < 3; ++c) {
        alignas(16) std::uint8_t bytes[16];
        for (int p = 0; p < 16; ++p) {
          const int src = 3 * p + c;
          bytes[p] = (src / 16 == k) ? static_cast<std::uint8_t>(src % 16) : 0x80;
        }
        m[k][c] = _mm_load_si128(reinterpret_cast<const __m128i*>(bytes));
      }
    }
  }
};

std::size_t count_changed_pixels(const std::uint16_t* ids_a,
                                 const std::uint16_t* ids_b,
                                 const std::uint8_t* rgb_a,
                                 const std::uint8_t* rgb_b, std::size_t n,
                                 std::uint8_t threshold) {
  static const DeinterleaveMasks masks;
  const __m128i thr = _mm_set1_epi8(static_cast<char>(threshold));
  const __m128i zero = _mm_setzero_si128();
  std::size_t changed = 0;
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    __m128i exceed[3];
    for (int k = 0; k < 3; ++k) {
      const __m128i a = _mm_loadu_si128(reinterpret_cast<const __m128i*>(rgb_a + 3 * i + 16 * k));
      const __m128i b = _mm_loadu_si128(reinterpret_cast<const __m128i*>(rgb_b + 3 * i + 16 * k));
      const __m128i absdiff = _mm_or_si128(_mm_subs_epu8(a, b), _mm_subs_epu8(b, a));
      // 0xFF where absdiff > threshold.
      exceed[k] = _mm_xor_si128(_mm_cmpeq_epi8(_mm_subs_epu8(absdiff, thr), zero),
                                _mm_set1_epi8(-1));
    }
    __m128i any = zero;
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 3; ++k) {
        any = _mm_or_si128(any, _mm_shuffle_epi8(exceed[k], masks.m[k][c]));
      }
    }
    const __m256i ia = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(ids_a + i));
    const __m256i ib = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(ids_b + i));
    const __m256i id_diff =
        _mm256_xor_si256(_mm256_cmpeq_epi16(ia, ib), _mm256_set1_epi16(-1));
    const __m256i flags = _mm256_or_si256(id_diff, _mm256_cvtepi8_epi16(any));
    const unsigned bits = static_cast<unsigned>(_mm256_movemask_epi8(flags));
    changed += static_cast<std::size_t>(__builtin_popcount(bits)) / 2;
  }
  for (; i < n; ++i) {
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
    int x = 0;
    for (; x + 4 <= ow; x += 4) {
      __m256d acc = _mm256_setzero_pd();
      for (int k = 0; k < ntaps; ++k) {
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(taps[k]),
                                               _mm256_loadu_pd(row + x + k)));
      }
      _mm256_storeu_pd(dst + x, acc);
    }
    for (; x < ow; ++x) {
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
    int x = 0;
    for (; x + 4 <= width; x += 4) {
      __m256d acc = _mm256_setzero_pd();
      for (int k = 0; k < ntaps; ++k) {
        acc = _mm256_add_pd(
            acc, _mm256_mul_pd(_mm256_set1_pd(taps[k]),
                               _mm256_loadu_pd(in + static_cast<std::size_t>(y + k) * width + x)));
      }
      _mm256_storeu_pd(dst + x, acc);
    }
    for (; x < width; ++x) {
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
const KernelTable kAvx2Table{squared_distances, min_squared_distances,
                             count_changed_pixels, convolve_rows, convolve_cols};
}  // namespace detail

}  // namespace gsi::kernels
